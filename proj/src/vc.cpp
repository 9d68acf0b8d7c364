#include "deidvc/vc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <stdexcept>

namespace deidvc::vc {

using numcore::Tape;
using numcore::Tensor;
using numcore::Var;

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::runtime_error(what); }

Tensor spk_tensor(const spkemb::SpeakerEmbedding& e) {
    if (static_cast<int>(e.values.size()) != spkemb::kEmbeddingDim)
        fail("speaker embedding of length " + std::to_string(e.values.size()));
    Tensor t = Tensor::zeros({1, spkemb::kEmbeddingDim});
    t.data = e.values;
    return t;
}

Tensor mel_tensor(const dsp::MelSpectrogram& mel) {
    Tensor t = Tensor::zeros({mel.frames, dsp::kNumMels});
    t.data = mel.values;
    return t;
}

dsp::MelSpectrogram mel_from_values(int frames, std::vector<float> values, bool clamp) {
    dsp::MelSpectrogram m;
    m.frames = frames;
    m.values = std::move(values);
    if (clamp)
        for (float& v : m.values) v = std::clamp(v, 0.0f, 1.0f);
    return m;
}

}  // namespace

VcModel make_vc_model(std::uint32_t seed) {
    VcModel m;
    m.seed = seed;
    std::mt19937 rng(seed);
    nn::add_linear(m.params, "ec.in", dsp::kNumMels, 128, rng);
    nn::add_conv1d(m.params, "ec.conv", 5, 128, 128, rng);
    nn::add_gru(m.params, "ec.fwd", 128, 64, rng);  // 64 per direction, concat 128
    nn::add_gru(m.params, "ec.bwd", 128, 64, rng);
    nn::add_linear(m.params, "ec.out", 128, kContentDim, rng);
    nn::add_gru(m.params, "dec.gru", kContentDim, 128, rng);
    nn::add_linear(m.params, "dec.fc1", 128 + spkemb::kEmbeddingDim, 256, rng);
    nn::add_linear(m.params, "dec.out", 256, dsp::kNumMels, rng);
    nn::add_conv1d(m.params, "post.c1", 5, dsp::kNumMels, 64, rng);
    nn::add_conv1d(m.params, "post.c2", 5, 64, 64, rng);
    nn::add_conv1d(m.params, "post.c3", 5, 64, 64, rng);
    nn::add_conv1d(m.params, "post.c4", 5, 64, 64, rng);
    nn::add_conv1d(m.params, "post.c5", 5, 64, dsp::kNumMels, rng);
    return m;
}

Var apply_content_encoder(Tape& t, const nn::VarMap& v, Var mel) {
    const int frames = t.dims(mel)[0];
    if (frames % kDownsample != 0)
        fail("content encoder needs frames divisible by 32, got " + std::to_string(frames));
    Var h = t.tanh_(nn::apply_linear(t, v, "ec.in", mel));
    h = t.tanh_(nn::apply_conv1d(t, v, "ec.conv", h));
    Var pooled = t.avgpool_rows(h, kDownsample);
    Var fwd = nn::apply_gru(t, v, "ec.fwd", pooled);
    Var bwd = t.reverse_rows(nn::apply_gru(t, v, "ec.bwd", t.reverse_rows(pooled)));
    Var cat = t.concat_cols(fwd, bwd);
    return t.tanh_(nn::apply_linear(t, v, "ec.out", cat));
}

DecodeVars apply_decoder(Tape& t, const nn::VarMap& v, Var code, Var spk) {
    const int code_frames = t.dims(code)[0];
    Var g = nn::apply_gru(t, v, "dec.gru", code);
    Var up = t.repeat_rows(g, kDownsample);
    Var spk_rows = t.broadcast_row(spk, code_frames * kDownsample);
    Var h = t.tanh_(nn::apply_linear(t, v, "dec.fc1", t.concat_cols(up, spk_rows)));
    Var raw = nn::apply_linear(t, v, "dec.out", h);
    Var r = t.tanh_(nn::apply_conv1d(t, v, "post.c1", raw));
    r = t.tanh_(nn::apply_conv1d(t, v, "post.c2", r));
    r = t.tanh_(nn::apply_conv1d(t, v, "post.c3", r));
    r = t.tanh_(nn::apply_conv1d(t, v, "post.c4", r));
    Var residual = nn::apply_conv1d(t, v, "post.c5", r);
    return {raw, t.add(raw, residual)};
}

ContentCode encode_content(const VcModel& model, const dsp::MelSpectrogram& mel) {
    Tape t;
    nn::VarMap v = model.params.bind(t, /*trainable=*/false);
    Var code = apply_content_encoder(t, v, t.constant(mel_tensor(mel), "mel"));
    ContentCode out;
    out.frames = mel.frames / kDownsample;
    out.values = t.value(code);
    return out;
}

ConversionOutput decode(const VcModel& model, const ContentCode& code,
                        const spkemb::SpeakerEmbedding& spk, bool clamp) {
    Tensor c = Tensor::zeros({code.frames, kContentDim});
    c.data = code.values;
    Tape t;
    nn::VarMap v = model.params.bind(t, /*trainable=*/false);
    DecodeVars d = apply_decoder(t, v, t.constant(c, "code"), t.constant(spk_tensor(spk), "spk"));
    const int frames = code.frames * kDownsample;
    ConversionOutput out;
    out.raw = mel_from_values(frames, t.value(d.raw), clamp);
    out.refined = mel_from_values(frames, t.value(d.refined), clamp);
    return out;
}

namespace {

struct Accum {
    std::optional<Var> v;
    void add(Tape& t, Var x) { v = v ? t.add(*v, x) : x; }
};

}  // namespace

LossTerms loss_stage1(Tape& t, const nn::VarMap& v, const std::vector<Sample>& batch,
                      const LossWeights& w) {
    if (batch.empty()) fail("loss_stage1: empty batch");
    Accum recon, recon0, content;
    for (const Sample& s : batch) {
        Var mel = t.constant(s.mel, "x1");
        Var c1 = apply_content_encoder(t, v, mel);
        DecodeVars d = apply_decoder(t, v, c1, t.constant(spk_tensor(s.spk), "s1"));
        recon.add(t, t.mse_loss(d.raw, mel));
        recon0.add(t, t.mse_loss(d.refined, mel));
        content.add(t, t.l1_loss(apply_content_encoder(t, v, d.raw), c1));
    }
    const float inv = 1.0f / static_cast<float>(batch.size());
    LossTerms out;
    out.recon = t.scale(*recon.v, inv);
    out.recon0 = t.scale(*recon0.v, inv);
    out.content = t.scale(*content.v, inv);
    out.total = t.add(out.recon, t.add(t.scale(out.recon0, w.mu), t.scale(out.content, w.lambda)));
    return out;
}

LossTerms loss_stage2(Tape& t, const nn::VarMap& v, const nn::VarMap& es_vars,
                      const std::vector<PairSample>& batch, const LossWeights& w) {
    if (batch.empty()) fail("loss_stage2: empty batch");
    Accum recon, recon0, content, content_consist, speaker_consist;
    for (const PairSample& p : batch) {
        if (p.src_id == p.tgt_id)
            fail("loss_stage2: source and target speaker are both '" + p.src_id + "'");
        Var mel = t.constant(p.mel, "x1");
        Var c1 = apply_content_encoder(t, v, mel);
        Var s1 = t.constant(spk_tensor(p.spk_src), "s1");
        Var s2 = t.constant(spk_tensor(p.spk_tgt), "s2");
        DecodeVars self = apply_decoder(t, v, c1, s1);
        recon.add(t, t.mse_loss(self.raw, mel));
        recon0.add(t, t.mse_loss(self.refined, mel));
        content.add(t, t.l1_loss(apply_content_encoder(t, v, self.raw), c1));
        // cross conversion feeds both consistency terms with the raw output
        DecodeVars cross = apply_decoder(t, v, c1, s2);
        content_consist.add(t, t.l1_loss(apply_content_encoder(t, v, cross.raw), c1));
        Var s2_hat = spkemb::apply_speaker_encoder(t, es_vars, cross.raw);
        speaker_consist.add(t, t.l1_loss(s2_hat, s2));
    }
    const float inv = 1.0f / static_cast<float>(batch.size());
    LossTerms out;
    out.recon = t.scale(*recon.v, inv);
    out.recon0 = t.scale(*recon0.v, inv);
    out.content = t.scale(*content.v, inv);
    out.content_consist = t.scale(*content_consist.v, inv);
    out.speaker_consist = t.scale(*speaker_consist.v, inv);
    out.total = t.add(
        out.recon,
        t.add(t.scale(out.recon0, w.mu),
              t.add(t.scale(out.content, w.lambda),
                    t.add(t.scale(*out.content_consist, w.alpha),
                          t.scale(*out.speaker_consist, w.beta)))));
    return out;
}

TrainVcResult train_vc(VcModel& model, const dsp::Corpus& corpus,
                       const spkemb::SpeakerEncoderModel& spk_encoder,
                       const cfg::RunConfig::Vc& cfg, int stage, std::uint32_t seed) {
    if (stage != 1 && stage != 2) fail("train_vc: stage must be 1 or 2");
    if (stage == 2 && model.stage < 1)
        fail("train_vc: stage 2 requires a stage-1 checkpoint (model has stage " +
             std::to_string(model.stage) + ")");

    const std::vector<std::string> speakers = corpus.speaker_ids();
    const int n_spk = static_cast<int>(speakers.size());
    if (n_spk < 2) fail("train_vc: need at least 2 speakers");

    // training mels per speaker; each speaker's last utterance is held out
    std::vector<std::vector<dsp::MelSpectrogram>> mels(n_spk);
    std::vector<spkemb::SpeakerEmbedding> spk_embs(n_spk);
    for (int s = 0; s < n_spk; ++s) {
        auto utts = corpus.utterances_of(speakers[s]);
        if (utts.size() < 2) fail("train_vc: speaker " + speakers[s] + " has < 2 utterances");
        utts.pop_back();
        std::vector<spkemb::SpeakerEmbedding> embs;
        for (const dsp::CorpusItem* item : utts) {
            dsp::MelSpectrogram m = dsp::mel_spectrogram(dsp::load_wav(corpus.root / item->path));
            if (m.frames < cfg.crop_frames)
                fail("train_vc: utterance " + item->utt_id + " shorter than crop");
            embs.push_back(spkemb::embed_utterance(spk_encoder, m));
            mels[s].push_back(std::move(m));
        }
        spk_embs[s] = spkemb::average_embeddings(embs);
    }

    LossWeights w;
    w.mu = cfg.mu;
    w.lambda = stage == 1 ? cfg.lambda : cfg.lambda_stage2;
    if (stage == 2) {
        w.alpha = cfg.alpha;
        w.beta = cfg.beta;
    }

    nn::AdamConfig acfg;
    acfg.lr = cfg.lr;
    nn::Optimizer opt(acfg);
    std::mt19937 rng(seed ^ (static_cast<std::uint32_t>(stage) << 20));
    const int steps = stage == 1 ? cfg.stage1_steps : cfg.stage2_steps;
    const int crop = cfg.crop_frames;

    TrainVcResult result;
    result.trace.reserve(steps);
    for (int step = 0; step < steps; ++step) {
        Tape t;
        nn::VarMap v = model.params.bind(t);
        nn::VarMap es = spk_encoder.params.bind(t, /*trainable=*/false);

        auto draw_crop = [&](int s) {
            const auto& pool = mels[s];
            const int u = std::uniform_int_distribution<int>(
                0, static_cast<int>(pool.size()) - 1)(rng);
            const int start =
                std::uniform_int_distribution<int>(0, pool[u].frames - crop)(rng);
            Tensor x = Tensor::zeros({crop, dsp::kNumMels});
            std::copy_n(pool[u].values.begin() + static_cast<std::size_t>(start) * dsp::kNumMels,
                        x.data.size(), x.data.begin());
            return x;
        };

        LossTerms terms;
        if (stage == 1) {
            std::vector<Sample> batch;
            for (int b = 0; b < cfg.batch_size; ++b) {
                const int s = std::uniform_int_distribution<int>(0, n_spk - 1)(rng);
                batch.push_back({draw_crop(s), spk_embs[s], speakers[s]});
            }
            terms = loss_stage1(t, v, batch, w);
        } else {
            std::vector<PairSample> batch;
            for (int b = 0; b < cfg.batch_size; ++b) {
                const int s = std::uniform_int_distribution<int>(0, n_spk - 1)(rng);
                int tgt = std::uniform_int_distribution<int>(0, n_spk - 2)(rng);
                if (tgt >= s) ++tgt;  // source != target
                batch.push_back({draw_crop(s), spk_embs[s], spk_embs[tgt],
                                 speakers[s], speakers[tgt]});
            }
            terms = loss_stage2(t, v, es, batch, w);
        }
        t.backward(terms.total);
        opt.step(model.params, t, v);

        TraceRow row;
        row.step = model.steps_done + step + 1;
        row.recon = t.scalar(terms.recon);
        row.recon0 = t.scalar(terms.recon0);
        row.content = t.scalar(terms.content);
        row.total = t.scalar(terms.total);
        if (terms.content_consist) row.content_consist = t.scalar(*terms.content_consist);
        if (terms.speaker_consist) row.speaker_consist = t.scalar(*terms.speaker_consist);
        result.trace.push_back(row);
    }
    model.stage = std::max(model.stage, stage);
    model.steps_done += steps;
    return result;
}

void write_loss_trace(const std::filesystem::path& path, const std::vector<TraceRow>& trace) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("write_loss_trace: cannot open " + path.string());
    f << "step,L_recon,L_recon0,L_content,L_content_consist,L_speaker_consist,total\n";
    char buf[128];
    for (const TraceRow& r : trace) {
        auto num = [&](double d) {
            std::snprintf(buf, sizeof buf, "%.9g", d);
            return std::string(buf);
        };
        f << r.step << ',' << num(r.recon) << ',' << num(r.recon0) << ',' << num(r.content)
          << ',' << (r.content_consist ? num(*r.content_consist) : "") << ','
          << (r.speaker_consist ? num(*r.speaker_consist) : "") << ',' << num(r.total) << '\n';
    }
    if (!f) fail("write_loss_trace: write failed: " + path.string());
}

dsp::MelSpectrogram convert_mel(const VcModel& model, const dsp::MelSpectrogram& source,
                                const spkemb::SpeakerEmbedding& target) {
    if (source.frames < spkemb::kMinFrames)
        fail("convert: source shorter than " + std::to_string(spkemb::kMinFrames) + " frames");
    const int frames = source.frames;
    const int padded = ((frames + kDownsample - 1) / kDownsample) * kDownsample;
    dsp::MelSpectrogram in;
    in.frames = padded;
    in.values.assign(static_cast<std::size_t>(padded) * dsp::kNumMels, 0.0f);  // floor pad
    std::copy(source.values.begin(), source.values.end(), in.values.begin());

    ConversionOutput out = decode(model, encode_content(model, in), target, /*clamp=*/true);
    dsp::MelSpectrogram refined;
    refined.frames = frames;  // drop the pad
    refined.values.assign(out.refined.values.begin(),
                          out.refined.values.begin() +
                              static_cast<std::size_t>(frames) * dsp::kNumMels);
    return refined;
}

ConvertResult convert(const VcModel& model, const dsp::Waveform& source,
                      const spkemb::SpeakerEmbedding& target, int griffin_lim_iterations) {
    ConvertResult r;
    r.refined = convert_mel(model, dsp::mel_spectrogram(source), target);
    r.wav = dsp::griffin_lim(r.refined, griffin_lim_iterations);
    return r;
}

void save_vc_model(const std::filesystem::path& path, const VcModel& model) {
    ckpt::Checkpoint c;
    c.metadata = {{"kind", "vc"},
                  {"seed", model.seed},
                  {"stage", model.stage},
                  {"steps", model.steps_done}};
    c.tensors = model.params.items();
    ckpt::save_checkpoint(path, c);
}

VcModel load_vc_model(const std::filesystem::path& path) {
    ckpt::Checkpoint c = ckpt::load_checkpoint(path);
    if (c.metadata.value("kind", "") != "vc")
        fail("load_vc_model: checkpoint kind is '" + c.metadata.value("kind", "") +
             "', expected 'vc': " + path.string());
    VcModel m;
    m.seed = c.metadata.value("seed", 0u);
    m.stage = c.metadata.value("stage", 0);
    m.steps_done = c.metadata.value("steps", 0);
    for (auto& [name, tensor] : c.tensors) m.params.add(name, std::move(tensor));
    return m;
}

}  // namespace deidvc::vc
