#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "deidvc/gradcheck.hpp"
#include "deidvc/spkemb.hpp"

using namespace deidvc;
using spkemb::SpeakerEmbedding;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("deidvc_spk_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<char> read_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

dsp::MelSpectrogram random_mel(int frames, std::uint32_t seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> u(0.05f, 0.95f);
    dsp::MelSpectrogram m;
    m.frames = frames;
    m.values.resize(static_cast<std::size_t>(frames) * dsp::kNumMels);
    for (float& v : m.values) v = u(rng);
    return m;
}

SpeakerEmbedding basis_embedding(int axis) {
    SpeakerEmbedding e;
    e.values.assign(spkemb::kEmbeddingDim, 0.0f);
    e.values[axis] = 1.0f;
    return e;
}

double cosine(const SpeakerEmbedding& a, const SpeakerEmbedding& b) {
    double d = 0.0;
    for (int i = 0; i < spkemb::kEmbeddingDim; ++i)
        d += static_cast<double>(a.values[i]) * b.values[i];
    return d;
}

double norm(const SpeakerEmbedding& e) {
    double n = 0.0;
    for (float v : e.values) n += static_cast<double>(v) * v;
    return std::sqrt(n);
}

}  // namespace

TEST_CASE("embed_utterance: deterministic, unit-norm, 256-d") {
    spkemb::SpeakerEncoderModel model = spkemb::make_speaker_encoder(3);
    dsp::MelSpectrogram mel = random_mel(64, 1);
    SpeakerEmbedding a = spkemb::embed_utterance(model, mel);
    SpeakerEmbedding b = spkemb::embed_utterance(model, mel);
    REQUIRE(a.values.size() == 256);
    CHECK(a.values == b.values);
    CHECK(norm(a) == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(a.source == SpeakerEmbedding::Source::real);
}

TEST_CASE("embed_utterance: rejects short input") {
    spkemb::SpeakerEncoderModel model = spkemb::make_speaker_encoder(3);
    CHECK_THROWS_WITH_AS(spkemb::embed_utterance(model, random_mel(31, 1)),
                         doctest::Contains("32"), std::runtime_error);
    CHECK_NOTHROW(spkemb::embed_utterance(model, random_mel(32, 1)));
}

TEST_CASE("embed_utterance: gradient w.r.t. mel matches finite differences") {
    spkemb::SpeakerEncoderModel model = spkemb::make_speaker_encoder(5);
    numcore::Tensor mel = numcore::Tensor::zeros({32, dsp::kNumMels});
    std::mt19937 rng(11);
    std::uniform_real_distribution<float> u(0.1f, 0.9f);
    for (float& v : mel.data) v = u(rng);
    mel.requires_grad = true;

    // weight the embedding with alternating signs so the projected gradient
    // does not cancel toward the float32 noise floor
    numcore::Tensor w = numcore::Tensor::zeros({1, spkemb::kEmbeddingDim});
    for (int i = 0; i < spkemb::kEmbeddingDim; ++i) w.data[i] = (i % 2 == 0) ? 1.0f : -1.0f;

    auto graph = [&](numcore::Tape& t, const std::map<std::string, numcore::Var>& in) {
        nn::VarMap v = model.params.bind(t, /*trainable=*/false);
        numcore::Var e = spkemb::apply_speaker_encoder(t, v, in.at("mel"));
        return t.sum(t.mul(e, t.constant(w, "w")));
    };

    // The 2560-element mel gradient spans 4 orders of magnitude; float32
    // finite differences carry ~1e-5 absolute noise, so elements near 1e-6
    // cannot pass a per-element relative test. Errors are normalized by the
    // largest gradient component instead; a backward bug in any op would
    // surface at 1e-2+ on this scale.
    auto fb = numcore::forward_backward(graph, {{"mel", mel}});
    const numcore::Tensor& analytic = fb.grads.at("mel");
    double gmax = 0.0;
    for (float g : analytic.data) gmax = std::max(gmax, static_cast<double>(std::fabs(g)));
    REQUIRE(gmax > 0.0);

    const float h = 3e-2f;
    double worst = 0.0;
    for (std::size_t i = 0; i < mel.data.size(); i += 3) {
        numcore::Tensor mp = mel, mm = mel;
        const float xp = mel.data[i] + h, xm = mel.data[i] - h;
        mp.data[i] = xp;
        mm.data[i] = xm;
        const double fp = numcore::forward_backward(graph, {{"mel", mp}}).value;
        const double fm = numcore::forward_backward(graph, {{"mel", mm}}).value;
        const double numeric = (fp - fm) / (static_cast<double>(xp) - static_cast<double>(xm));
        worst = std::max(worst, std::fabs(analytic.data[i] - numeric) / gmax);
    }
    INFO("worst scale-relative err ", worst);
    CHECK(worst < 1e-3);
}

TEST_CASE("average_embeddings: mean of copies is the embedding itself") {
    spkemb::SpeakerEncoderModel model = spkemb::make_speaker_encoder(7);
    SpeakerEmbedding e = spkemb::embed_utterance(model, random_mel(40, 2));
    SpeakerEmbedding avg = spkemb::average_embeddings({e, e, e});
    CHECK(avg.source == SpeakerEmbedding::Source::averaged);
    for (int i = 0; i < 256; ++i)
        CHECK(avg.values[i] == doctest::Approx(e.values[i]).epsilon(1e-6));
}

TEST_CASE("average_embeddings: orthogonal pair bisects") {
    SpeakerEmbedding a = basis_embedding(0);
    SpeakerEmbedding b = basis_embedding(1);
    SpeakerEmbedding avg = spkemb::average_embeddings({a, b});
    CHECK(norm(avg) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(cosine(avg, a) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-6));
    CHECK(cosine(avg, b) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-6));
}

TEST_CASE("average_embeddings: permutation-invariant, rejects empty") {
    spkemb::SpeakerEncoderModel model = spkemb::make_speaker_encoder(9);
    std::vector<SpeakerEmbedding> embs;
    for (int i = 0; i < 6; ++i) embs.push_back(spkemb::embed_utterance(model, random_mel(48, 100 + i)));
    SpeakerEmbedding fwd = spkemb::average_embeddings(embs);
    std::reverse(embs.begin(), embs.end());
    SpeakerEmbedding rev = spkemb::average_embeddings(embs);
    for (int i = 0; i < 256; ++i)
        CHECK(fwd.values[i] == doctest::Approx(rev.values[i]).epsilon(1e-7));
    CHECK_THROWS_AS(spkemb::average_embeddings({}), std::runtime_error);
}

TEST_CASE("train_speaker_encoder: desk-scale run separates 2 speakers") {
    const fs::path dir = temp_dir("train2");
    dsp::Corpus corpus = dsp::synth_corpus(2, 6, 2.5, 21, dir);
    cfg::RunConfig::Spkemb cfg;
    cfg.steps = 200;
    cfg.batch_size = 8;
    spkemb::TrainSpkResult r = spkemb::train_speaker_encoder(corpus, cfg, 4);
    CHECK(r.train_accuracy > 0.9f);

    // held-out style check: crops of the same speaker agree more than across
    auto mel_of = [&](int spk, int utt) {
        return dsp::mel_spectrogram(dsp::load_wav(dir / corpus.items[spk * 6 + utt].path));
    };
    SpeakerEmbedding a0 = spkemb::embed_utterance(r.model, mel_of(0, 4));
    SpeakerEmbedding a1 = spkemb::embed_utterance(r.model, mel_of(0, 5));
    SpeakerEmbedding b0 = spkemb::embed_utterance(r.model, mel_of(1, 5));
    CHECK(cosine(a0, a1) > cosine(a0, b0));
}

TEST_CASE("train_speaker_encoder: deterministic checkpoints, head discarded") {
    const fs::path dir = temp_dir("det");
    dsp::Corpus corpus = dsp::synth_corpus(2, 3, 2.2, 8, dir / "c");
    cfg::RunConfig::Spkemb cfg;
    cfg.steps = 25;
    cfg.batch_size = 4;
    spkemb::TrainSpkResult r1 = spkemb::train_speaker_encoder(corpus, cfg, 6);
    spkemb::TrainSpkResult r2 = spkemb::train_speaker_encoder(corpus, cfg, 6);
    spkemb::save_speaker_encoder(dir / "a.ckpt", r1.model);
    spkemb::save_speaker_encoder(dir / "b.ckpt", r2.model);
    CHECK(read_bytes(dir / "a.ckpt") == read_bytes(dir / "b.ckpt"));

    ckpt::Checkpoint c = ckpt::load_checkpoint(dir / "a.ckpt");
    CHECK(c.metadata.at("kind") == "spkemb");
    for (const auto& [name, t] : c.tensors) REQUIRE(name.rfind("head.", 0) != 0);

    // different seed diverges
    spkemb::TrainSpkResult r3 = spkemb::train_speaker_encoder(corpus, cfg, 7);
    spkemb::save_speaker_encoder(dir / "c.ckpt", r3.model);
    CHECK(read_bytes(dir / "a.ckpt") != read_bytes(dir / "c.ckpt"));
}

TEST_CASE("train_speaker_encoder: rejects single-speaker corpus") {
    dsp::Corpus corpus;
    corpus.items = {{"only", "u000", "only/u000.wav", 1.0}};
    cfg::RunConfig::Spkemb cfg;
    CHECK_THROWS_WITH_AS(spkemb::train_speaker_encoder(corpus, cfg, 1),
                         doctest::Contains("2 speakers"), std::runtime_error);
}

TEST_CASE("embedding CSV: round-trips ids, kinds, and values") {
    const fs::path dir = temp_dir("csv");
    spkemb::SpeakerEncoderModel model = spkemb::make_speaker_encoder(13);
    std::vector<spkemb::NamedEmbedding> embs;
    embs.push_back({"spkA", spkemb::embed_utterance(model, random_mel(40, 1))});
    embs.push_back({"avgB", spkemb::average_embeddings({embs[0].emb, embs[0].emb})});
    spkemb::write_embedding_csv(dir / "e.csv", embs);
    std::vector<spkemb::NamedEmbedding> back = spkemb::read_embedding_csv(dir / "e.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[0].id == "spkA");
    CHECK(back[0].emb.source == SpeakerEmbedding::Source::real);
    CHECK(back[1].emb.source == SpeakerEmbedding::Source::averaged);
    CHECK(back[0].emb.values == embs[0].emb.values);  // %.9g round-trips float32
    CHECK(back[1].emb.values == embs[1].emb.values);

    // rewrite is byte-identical
    spkemb::write_embedding_csv(dir / "f.csv", back);
    CHECK(read_bytes(dir / "e.csv") == read_bytes(dir / "f.csv"));
}
