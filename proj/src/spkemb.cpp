#include "deidvc/spkemb.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace deidvc::spkemb {

using numcore::Tape;
using numcore::Tensor;
using numcore::Var;

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::runtime_error(what); }

Tensor mel_crop_tensor(const dsp::MelSpectrogram& mel, int start, int frames) {
    Tensor t = Tensor::zeros({frames, dsp::kNumMels});
    std::copy_n(mel.values.begin() + static_cast<std::size_t>(start) * dsp::kNumMels,
                static_cast<std::size_t>(frames) * dsp::kNumMels, t.data.begin());
    return t;
}

}  // namespace

const char* source_name(SpeakerEmbedding::Source s) {
    switch (s) {
        case SpeakerEmbedding::Source::real: return "real";
        case SpeakerEmbedding::Source::averaged: return "averaged";
        case SpeakerEmbedding::Source::pseudo: return "pseudo";
    }
    fail("source_name: bad enum");
}

SpeakerEmbedding::Source source_from_name(const std::string& name) {
    if (name == "real") return SpeakerEmbedding::Source::real;
    if (name == "averaged") return SpeakerEmbedding::Source::averaged;
    if (name == "pseudo") return SpeakerEmbedding::Source::pseudo;
    fail("unknown embedding kind: " + name);
}

SpeakerEncoderModel make_speaker_encoder(std::uint32_t seed) {
    SpeakerEncoderModel m;
    m.seed = seed;
    std::mt19937 rng(seed);
    nn::add_linear(m.params, "enc.in", dsp::kNumMels, 128, rng);
    nn::add_conv1d(m.params, "enc.conv", 3, 128, 128, rng);
    nn::add_linear(m.params, "enc.out", 128, kEmbeddingDim, rng);
    return m;
}

Var apply_speaker_encoder(Tape& t, const nn::VarMap& v, Var mel) {
    Var h = t.tanh_(nn::apply_linear(t, v, "enc.in", mel));
    h = t.tanh_(nn::apply_conv1d(t, v, "enc.conv", h));
    Var pooled = t.mean_rows(h);
    return t.l2_normalize(nn::apply_linear(t, v, "enc.out", pooled));
}

SpeakerEmbedding embed_utterance(const SpeakerEncoderModel& model, const dsp::MelSpectrogram& mel) {
    if (mel.frames < kMinFrames)
        fail("embed_utterance: need at least " + std::to_string(kMinFrames) + " frames, got " +
             std::to_string(mel.frames));
    Tape t;
    nn::VarMap v = model.params.bind(t, /*trainable=*/false);
    Tensor x = Tensor::zeros({mel.frames, dsp::kNumMels});
    x.data = mel.values;
    Var e = apply_speaker_encoder(t, v, t.constant(x, "mel"));
    SpeakerEmbedding out;
    out.values = t.value(e);
    out.source = SpeakerEmbedding::Source::real;
    return out;
}

SpeakerEmbedding average_embeddings(const std::vector<SpeakerEmbedding>& embs) {
    if (embs.empty()) fail("average_embeddings: empty list");
    std::vector<double> acc(kEmbeddingDim, 0.0);
    for (const auto& e : embs) {
        if (static_cast<int>(e.values.size()) != kEmbeddingDim)
            fail("average_embeddings: embedding of length " + std::to_string(e.values.size()));
        for (int i = 0; i < kEmbeddingDim; ++i) acc[i] += e.values[i];
    }
    double norm = 0.0;
    for (double v : acc) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < 1e-12) fail("average_embeddings: mean collapsed to zero");
    SpeakerEmbedding out;
    out.values.resize(kEmbeddingDim);
    for (int i = 0; i < kEmbeddingDim; ++i) out.values[i] = static_cast<float>(acc[i] / norm);
    out.source = SpeakerEmbedding::Source::averaged;
    return out;
}

TrainSpkResult train_speaker_encoder(const dsp::Corpus& corpus, const cfg::RunConfig::Spkemb& cfg,
                                     std::uint32_t seed) {
    const std::vector<std::string> speakers = corpus.speaker_ids();
    const int n_spk = static_cast<int>(speakers.size());
    if (n_spk < 2) fail("train_speaker_encoder: need at least 2 speakers, got " +
                        std::to_string(n_spk));

    // mel cache per (speaker, utterance)
    std::vector<std::vector<dsp::MelSpectrogram>> mels(n_spk);
    for (int s = 0; s < n_spk; ++s) {
        for (const dsp::CorpusItem* item : corpus.utterances_of(speakers[s])) {
            dsp::MelSpectrogram m = dsp::mel_spectrogram(dsp::load_wav(corpus.root / item->path));
            if (m.frames < cfg.crop_frames)
                fail("train_speaker_encoder: utterance " + item->utt_id + " shorter than crop (" +
                     std::to_string(m.frames) + " < " + std::to_string(cfg.crop_frames) + " frames)");
            mels[s].push_back(std::move(m));
        }
        if (mels[s].empty()) fail("train_speaker_encoder: speaker with no utterances");
    }

    SpeakerEncoderModel model = make_speaker_encoder(seed);
    std::mt19937 rng(seed ^ 0x9e3779b9u);
    nn::add_linear(model.params, "head.fc", kEmbeddingDim, n_spk, rng);

    nn::AdamConfig acfg;
    acfg.lr = cfg.lr;
    nn::Optimizer opt(acfg);

    const int tail_start = cfg.steps - cfg.steps / 4;
    int tail_hits = 0, tail_total = 0;
    for (int step = 0; step < cfg.steps; ++step) {
        Tape t;
        nn::VarMap v = model.params.bind(t);
        std::vector<Var> rows;
        std::vector<int> labels;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const int s = std::uniform_int_distribution<int>(0, n_spk - 1)(rng);
            const auto& spk_mels = mels[s];
            const int u = std::uniform_int_distribution<int>(
                0, static_cast<int>(spk_mels.size()) - 1)(rng);
            const int start = std::uniform_int_distribution<int>(
                0, spk_mels[u].frames - cfg.crop_frames)(rng);
            Tensor crop = mel_crop_tensor(spk_mels[u], start, cfg.crop_frames);
            rows.push_back(apply_speaker_encoder(t, v, t.constant(crop, "mel")));
            labels.push_back(s);
        }
        Var embs = t.stack_rows(rows);
        Var logits = nn::apply_linear(t, v, "head.fc", embs);
        Var loss = t.softmax_cross_entropy(logits, labels);
        t.backward(loss);
        opt.step(model.params, t, v);

        if (step >= tail_start) {
            const auto& lv = t.value(logits);
            for (int b = 0; b < cfg.batch_size; ++b) {
                int argmax = 0;
                for (int c = 1; c < n_spk; ++c)
                    if (lv[static_cast<std::size_t>(b) * n_spk + c] >
                        lv[static_cast<std::size_t>(b) * n_spk + argmax])
                        argmax = c;
                tail_hits += (argmax == labels[b]);
                ++tail_total;
            }
        }
    }
    model.trained_steps = cfg.steps;

    // drop the classification head; only the embedding stack ships
    TrainSpkResult result;
    result.model.seed = seed;
    result.model.trained_steps = cfg.steps;
    for (const auto& [name, tensor] : model.params.items())
        if (name.rfind("head.", 0) != 0) result.model.params.add(name, tensor);
    result.train_accuracy =
        tail_total > 0 ? static_cast<float>(tail_hits) / static_cast<float>(tail_total) : 0.0f;
    return result;
}

void save_speaker_encoder(const std::filesystem::path& path, const SpeakerEncoderModel& model) {
    ckpt::Checkpoint c;
    c.metadata = {{"kind", "spkemb"}, {"seed", model.seed}, {"steps", model.trained_steps}};
    c.tensors = model.params.items();
    ckpt::save_checkpoint(path, c);
}

SpeakerEncoderModel load_speaker_encoder(const std::filesystem::path& path) {
    ckpt::Checkpoint c = ckpt::load_checkpoint(path);
    if (c.metadata.value("kind", "") != "spkemb")
        fail("load_speaker_encoder: checkpoint kind is '" + c.metadata.value("kind", "") +
             "', expected 'spkemb': " + path.string());
    SpeakerEncoderModel m;
    m.seed = c.metadata.value("seed", 0u);
    m.trained_steps = c.metadata.value("steps", 0);
    for (auto& [name, tensor] : c.tensors) m.params.add(name, std::move(tensor));
    return m;
}

void write_embedding_csv(const std::filesystem::path& path,
                         const std::vector<NamedEmbedding>& embs) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("write_embedding_csv: cannot open " + path.string());
    f << "id,kind";
    for (int i = 0; i < kEmbeddingDim; ++i) f << ",e" << i;
    f << '\n';
    char buf[32];
    for (const auto& ne : embs) {
        f << ne.id << ',' << source_name(ne.emb.source);
        for (float v : ne.emb.values) {
            std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
            f << ',' << buf;
        }
        f << '\n';
    }
    if (!f) fail("write_embedding_csv: write failed: " + path.string());
}

std::vector<NamedEmbedding> read_embedding_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) fail("read_embedding_csv: cannot open " + path.string());
    std::string line;
    if (!std::getline(f, line) || line.rfind("id,kind,e0,", 0) != 0)
        fail("read_embedding_csv: bad header in " + path.string());
    std::vector<NamedEmbedding> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        NamedEmbedding ne;
        std::string kind, cell;
        if (!std::getline(ss, ne.id, ',') || !std::getline(ss, kind, ','))
            fail("read_embedding_csv: malformed row: " + line);
        ne.emb.source = source_from_name(kind);
        while (std::getline(ss, cell, ',')) ne.emb.values.push_back(std::stof(cell));
        if (static_cast<int>(ne.emb.values.size()) != kEmbeddingDim)
            fail("read_embedding_csv: row with " + std::to_string(ne.emb.values.size()) +
                 " values, expected 256");
        out.push_back(std::move(ne));
    }
    return out;
}

}  // namespace deidvc::spkemb
