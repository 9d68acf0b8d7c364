#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "deidvc/checkpoint.hpp"
#include "deidvc/config.hpp"
#include "deidvc/nn.hpp"
#include "deidvc/spkemb.hpp"

namespace deidvc::psg {

inline constexpr int kLatentDim = 64;
inline constexpr int kHiddenDim = 384;

struct LatentGaussian {
    std::vector<float> mu;       // 64
    std::vector<float> log_var;  // 64
};

// VAE over speaker embeddings: 256 -> 384 -> (mu, log_var); 64 -> 384 -> 256.
struct PsgModel {
    nn::ParamStore params;
    std::uint32_t seed = 0;
    int trained_epochs = 0;
};

// Reconstruction objective variants (the ablation axis).
enum class ReconObjective { l2, l2_dist, l1_dist };
const char* objective_name(ReconObjective o);

PsgModel make_psg_model(std::uint32_t seed);

// graph builders; `s` is [1,256], `z` is [1,64]
struct EncodeVars {
    numcore::Var mu;
    numcore::Var log_var;
};
EncodeVars apply_vae_encoder(numcore::Tape& t, const nn::VarMap& v, numcore::Var s);
numcore::Var apply_generator(numcore::Tape& t, const nn::VarMap& v, numcore::Var z);

// ---- plain-value front ends ----
LatentGaussian vae_encode(const PsgModel& model, const spkemb::SpeakerEmbedding& s);
std::vector<float> reparameterize(const LatentGaussian& lg, const std::vector<float>& eps);
std::vector<float> psg_decode(const PsgModel& model, const std::vector<float>& z);

// ---- loss ----
struct PsgLossValues {
    double l1 = 0.0;      // reconstruction term (sum-reduced; squared for L2 variants)
    double l_dist = 0.0;
    double l_kl = 0.0;
    double total = 0.0;
};
// Per-sample values; training batch-means these. The reconstruction term
// follows `objective`; l_dist is reported but only weighted into the total
// for objectives that include it.
PsgLossValues psg_loss(const std::vector<float>& s, const std::vector<float>& s_hat,
                       const LatentGaussian& lg, float lambda_dist,
                       ReconObjective objective = ReconObjective::l1_dist);

// Differentiable composite loss for one sample on an existing tape.
numcore::Var psg_loss_var(numcore::Tape& t, numcore::Var s, numcore::Var s_hat,
                          numcore::Var mu, numcore::Var log_var, float lambda_dist,
                          ReconObjective objective);

// ---- training / sampling ----
struct TrainPsgResult {
    std::vector<double> epoch_loss;  // batch-meaned total per epoch
};
TrainPsgResult train_psg(PsgModel& model, const std::vector<spkemb::SpeakerEmbedding>& embeddings,
                         const cfg::RunConfig::Psg& cfg, std::uint32_t seed,
                         ReconObjective objective = ReconObjective::l1_dist);
// continues from an existing model on a new embedding set
TrainPsgResult finetune_psg(PsgModel& model,
                            const std::vector<spkemb::SpeakerEmbedding>& embeddings,
                            const cfg::RunConfig::Psg& cfg, std::uint32_t seed,
                            ReconObjective objective = ReconObjective::l1_dist);

enum class AssignLevel { utterance, speaker };
const char* level_name(AssignLevel level);

struct PseudoSpeaker {
    spkemb::SpeakerEmbedding emb;  // unit-normalized, source = pseudo
    std::uint32_t seed = 0;
    int index = 0;
    AssignLevel level = AssignLevel::utterance;
};
std::vector<PseudoSpeaker> sample_pseudo(const PsgModel& model, int n, std::uint32_t seed,
                                         AssignLevel level);

// pseudo export: embedding CSV plus seed,index,level columns
void write_pseudo_csv(const std::filesystem::path& path, const std::vector<PseudoSpeaker>& ps);
std::vector<PseudoSpeaker> read_pseudo_csv(const std::filesystem::path& path);

void save_psg_model(const std::filesystem::path& path, const PsgModel& model);
PsgModel load_psg_model(const std::filesystem::path& path);

}  // namespace deidvc::psg
