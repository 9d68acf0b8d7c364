#include "deidvc/psg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace deidvc::psg {

using numcore::Tape;
using numcore::Tensor;
using numcore::Var;

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::runtime_error(what); }

Tensor row_tensor(const std::vector<float>& v, int expect) {
    if (static_cast<int>(v.size()) != expect)
        fail("vector of length " + std::to_string(v.size()) + ", expected " +
             std::to_string(expect));
    Tensor t = Tensor::zeros({1, expect});
    t.data = v;
    return t;
}

}  // namespace

const char* objective_name(ReconObjective o) {
    switch (o) {
        case ReconObjective::l2: return "L2";
        case ReconObjective::l2_dist: return "L2+L_dist";
        case ReconObjective::l1_dist: return "L1+L_dist";
    }
    fail("objective_name: bad enum");
}

const char* level_name(AssignLevel level) {
    return level == AssignLevel::utterance ? "utterance" : "speaker";
}

PsgModel make_psg_model(std::uint32_t seed) {
    PsgModel m;
    m.seed = seed;
    std::mt19937 rng(seed);
    nn::add_linear(m.params, "enc.fc", spkemb::kEmbeddingDim, kHiddenDim, rng);
    nn::add_linear(m.params, "enc.mu", kHiddenDim, kLatentDim, rng);
    nn::add_linear(m.params, "enc.lv", kHiddenDim, kLatentDim, rng);
    nn::add_linear(m.params, "gen.fc", kLatentDim, kHiddenDim, rng);
    nn::add_linear(m.params, "gen.out", kHiddenDim, spkemb::kEmbeddingDim, rng);
    return m;
}

EncodeVars apply_vae_encoder(Tape& t, const nn::VarMap& v, Var s) {
    Var h = t.tanh_(nn::apply_linear(t, v, "enc.fc", s));
    return {nn::apply_linear(t, v, "enc.mu", h), nn::apply_linear(t, v, "enc.lv", h)};
}

Var apply_generator(Tape& t, const nn::VarMap& v, Var z) {
    Var h = t.tanh_(nn::apply_linear(t, v, "gen.fc", z));
    return nn::apply_linear(t, v, "gen.out", h);
}

LatentGaussian vae_encode(const PsgModel& model, const spkemb::SpeakerEmbedding& s) {
    Tape t;
    nn::VarMap v = model.params.bind(t, /*trainable=*/false);
    EncodeVars e = apply_vae_encoder(t, v, t.constant(row_tensor(s.values, 256), "s"));
    return {t.value(e.mu), t.value(e.log_var)};
}

std::vector<float> reparameterize(const LatentGaussian& lg, const std::vector<float>& eps) {
    if (lg.mu.size() != static_cast<std::size_t>(kLatentDim) || lg.log_var.size() != lg.mu.size())
        fail("reparameterize: latent of wrong width");
    if (eps.size() != lg.mu.size()) fail("reparameterize: eps of wrong width");
    std::vector<float> z(kLatentDim);
    for (int i = 0; i < kLatentDim; ++i) {
        const float sigma = std::exp(0.5f * lg.log_var[i]);
        if (!std::isfinite(sigma) || sigma <= 0.0f) fail("reparameterize: non-finite sigma");
        z[i] = lg.mu[i] + sigma * eps[i];
    }
    return z;
}

std::vector<float> psg_decode(const PsgModel& model, const std::vector<float>& z) {
    Tape t;
    nn::VarMap v = model.params.bind(t, /*trainable=*/false);
    return t.value(apply_generator(t, v, t.constant(row_tensor(z, kLatentDim), "z")));
}

Var psg_loss_var(Tape& t, Var s, Var s_hat, Var mu, Var log_var, float lambda_dist,
                 ReconObjective objective) {
    Var diff = t.sub(s, s_hat);
    Var recon = objective == ReconObjective::l1_dist ? t.sum(t.abs_(diff))
                                                     : t.sum(t.square(diff));
    // KL(q || N(0,I)) = 1/2 sum(mu^2 + sigma^2 - log sigma^2 - 1)
    Var kl_terms = t.add_scalar(
        t.sub(t.add(t.square(mu), t.exp_(log_var)), log_var), -1.0f);
    Var kl = t.scale(t.sum(kl_terms), 0.5f);
    Var total = t.add(recon, kl);
    if (objective != ReconObjective::l2) {
        Var dist = t.add_scalar(t.neg(t.cosine_similarity(s, s_hat)), 1.0f);
        total = t.add(total, t.scale(dist, lambda_dist));
    }
    return total;
}

PsgLossValues psg_loss(const std::vector<float>& s, const std::vector<float>& s_hat,
                       const LatentGaussian& lg, float lambda_dist, ReconObjective objective) {
    if (s.size() != 256 || s_hat.size() != 256) fail("psg_loss: embeddings must be 256-d");
    if (lg.mu.size() != 64 || lg.log_var.size() != 64) fail("psg_loss: latent must be 64-d");
    PsgLossValues out;
    double dot = 0.0, ns = 0.0, nh = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double d = static_cast<double>(s[i]) - s_hat[i];
        out.l1 += objective == ReconObjective::l1_dist ? std::fabs(d) : d * d;
        dot += static_cast<double>(s[i]) * s_hat[i];
        ns += static_cast<double>(s[i]) * s[i];
        nh += static_cast<double>(s_hat[i]) * s_hat[i];
    }
    if (ns <= 0.0 || nh <= 0.0) fail("psg_loss: zero-norm vector in cosine distance");
    out.l_dist = 1.0 - dot / std::sqrt(ns * nh);
    for (int i = 0; i < kLatentDim; ++i) {
        const double mu = lg.mu[i], lv = lg.log_var[i];
        out.l_kl += 0.5 * (mu * mu + std::exp(lv) - lv - 1.0);
    }
    out.total = out.l1 + out.l_kl +
                (objective != ReconObjective::l2 ? lambda_dist * out.l_dist : 0.0);
    return out;
}

namespace {

TrainPsgResult run_training(PsgModel& model, const std::vector<spkemb::SpeakerEmbedding>& embs,
                            const cfg::RunConfig::Psg& cfg, std::uint32_t seed,
                            ReconObjective objective, bool require_min) {
    if (require_min && embs.size() < 64)
        fail("train_psg: need at least 64 training embeddings, got " +
             std::to_string(embs.size()));
    if (embs.empty()) fail("train_psg: empty embedding set");
    for (const auto& e : embs)
        if (e.values.size() != 256) fail("train_psg: embedding of wrong width");

    nn::AdamConfig acfg;
    acfg.lr = cfg.lr;
    nn::Optimizer opt(acfg);
    std::mt19937 rng(seed ^ 0x50534721u);
    std::normal_distribution<float> gauss(0.0f, 1.0f);

    const int n = static_cast<int>(embs.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    TrainPsgResult result;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_sum = 0.0;
        int batches = 0;
        for (int off = 0; off < n; off += cfg.batch_size) {
            const int bsz = std::min(cfg.batch_size, n - off);
            Tape t;
            nn::VarMap v = model.params.bind(t);
            Var batch_total{};
            for (int b = 0; b < bsz; ++b) {
                const auto& emb = embs[static_cast<std::size_t>(order[off + b])];
                Var s = t.constant(row_tensor(emb.values, 256), "s");
                EncodeVars enc = apply_vae_encoder(t, v, s);
                Tensor eps = Tensor::zeros({1, kLatentDim});
                for (float& e : eps.data) e = gauss(rng);
                Var sigma = t.exp_(t.scale(enc.log_var, 0.5f));
                Var z = t.add(enc.mu, t.mul(sigma, t.constant(eps, "eps")));
                Var s_hat = apply_generator(t, v, z);
                Var loss = psg_loss_var(t, s, s_hat, enc.mu, enc.log_var, cfg.lambda_dist,
                                        objective);
                batch_total = b == 0 ? loss : t.add(batch_total, loss);
            }
            Var mean_loss = t.scale(batch_total, 1.0f / static_cast<float>(bsz));
            t.backward(mean_loss);
            opt.step(model.params, t, v);
            epoch_sum += t.scalar(mean_loss);
            ++batches;
        }
        result.epoch_loss.push_back(epoch_sum / batches);
    }
    model.trained_epochs += cfg.epochs;
    return result;
}

}  // namespace

TrainPsgResult train_psg(PsgModel& model, const std::vector<spkemb::SpeakerEmbedding>& embeddings,
                         const cfg::RunConfig::Psg& cfg, std::uint32_t seed,
                         ReconObjective objective) {
    return run_training(model, embeddings, cfg, seed, objective, /*require_min=*/true);
}

TrainPsgResult finetune_psg(PsgModel& model,
                            const std::vector<spkemb::SpeakerEmbedding>& embeddings,
                            const cfg::RunConfig::Psg& cfg, std::uint32_t seed,
                            ReconObjective objective) {
    // a finetune set may be smaller than the pretraining floor
    return run_training(model, embeddings, cfg, seed, objective, /*require_min=*/false);
}

std::vector<PseudoSpeaker> sample_pseudo(const PsgModel& model, int n, std::uint32_t seed,
                                         AssignLevel level) {
    if (n < 1) fail("sample_pseudo: n must be >= 1");
    std::mt19937 rng(seed ^ 0x50455544u);
    std::normal_distribution<float> gauss(0.0f, 1.0f);
    std::vector<PseudoSpeaker> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        std::vector<float> z(kLatentDim);
        for (float& v : z) v = gauss(rng);
        std::vector<float> raw = psg_decode(model, z);
        double norm = 0.0;
        for (float v : raw) norm += static_cast<double>(v) * v;
        norm = std::sqrt(norm);
        if (norm < 1e-12) fail("sample_pseudo: generator produced a zero embedding");
        PseudoSpeaker p;
        p.emb.values.resize(raw.size());
        for (std::size_t k = 0; k < raw.size(); ++k)
            p.emb.values[k] = static_cast<float>(raw[k] / norm);
        p.emb.source = spkemb::SpeakerEmbedding::Source::pseudo;
        p.seed = seed;
        p.index = i;
        p.level = level;
        out.push_back(std::move(p));
    }
    return out;
}

void write_pseudo_csv(const std::filesystem::path& path, const std::vector<PseudoSpeaker>& ps) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("write_pseudo_csv: cannot open " + path.string());
    f << "id,kind";
    for (int i = 0; i < spkemb::kEmbeddingDim; ++i) f << ",e" << i;
    f << ",seed,index,level\n";
    char buf[32];
    for (const PseudoSpeaker& p : ps) {
        f << "pseudo" << p.index << ",pseudo";
        for (float v : p.emb.values) {
            std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
            f << ',' << buf;
        }
        f << ',' << p.seed << ',' << p.index << ',' << level_name(p.level) << '\n';
    }
    if (!f) fail("write_pseudo_csv: write failed: " + path.string());
}

std::vector<PseudoSpeaker> read_pseudo_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) fail("read_pseudo_csv: cannot open " + path.string());
    std::string line;
    if (!std::getline(f, line) || line.rfind("id,kind,e0,", 0) != 0)
        fail("read_pseudo_csv: bad header in " + path.string());
    std::vector<PseudoSpeaker> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::vector<std::string> cells;
        for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
        if (cells.size() != 2 + 256 + 3) fail("read_pseudo_csv: malformed row: " + line);
        PseudoSpeaker p;
        p.emb.source = spkemb::source_from_name(cells[1]);
        p.emb.values.reserve(256);
        for (int i = 0; i < 256; ++i) p.emb.values.push_back(std::stof(cells[2 + i]));
        p.seed = static_cast<std::uint32_t>(std::stoul(cells[258]));
        p.index = std::stoi(cells[259]);
        p.level = cells[260] == "utterance" ? AssignLevel::utterance : AssignLevel::speaker;
        out.push_back(std::move(p));
    }
    return out;
}

void save_psg_model(const std::filesystem::path& path, const PsgModel& model) {
    ckpt::Checkpoint c;
    c.metadata = {{"kind", "psg"}, {"seed", model.seed}, {"epochs", model.trained_epochs}};
    c.tensors = model.params.items();
    ckpt::save_checkpoint(path, c);
}

PsgModel load_psg_model(const std::filesystem::path& path) {
    ckpt::Checkpoint c = ckpt::load_checkpoint(path);
    if (c.metadata.value("kind", "") != "psg")
        fail("load_psg_model: checkpoint kind is '" + c.metadata.value("kind", "") +
             "', expected 'psg': " + path.string());
    PsgModel m;
    m.seed = c.metadata.value("seed", 0u);
    m.trained_epochs = c.metadata.value("epochs", 0);
    for (auto& [name, tensor] : c.tensors) m.params.add(name, std::move(tensor));
    return m;
}

}  // namespace deidvc::psg
