#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "deidvc/config.hpp"
#include "deidvc/dsp.hpp"
#include "deidvc/psg.hpp"
#include "deidvc/spkemb.hpp"
#include "deidvc/vc.hpp"

namespace deidvc::eval {

// 2 s of context at the analysis hop; enrollment crops use this length
inline constexpr int kEnrollCropFrames = 125;

enum class Label { genuine, impostor };

struct Trial {
    std::string trial_id;
    Label label = Label::genuine;
    double score = 0.0;
};

struct ScoreSet {
    std::vector<Trial> trials;
};

struct EerResult {
    double eer = 0.0;
    double threshold = 0.0;
};

// Sweeps the sorted distinct scores and their midpoints; FAR = fraction of
// impostors >= t, FRR = fraction of genuines < t. Returns the threshold
// minimizing |FAR - FRR| (ties -> lowest threshold), eer = (FAR+FRR)/2 there.
EerResult compute_eer(const ScoreSet& scores);

struct ReconReport {
    std::string split;
    double mse = 0.0;      // mean over pairs of mean squared coordinate error
    double cos_sim = 0.0;  // mean cosine similarity
};

ReconReport embedding_metrics(
    const std::vector<std::pair<std::vector<float>, std::vector<float>>>& pairs,
    const std::string& split);

// One row per reconstruction objective, trained on the same data and seed.
struct AblationRow {
    psg::ReconObjective objective;
    ReconReport train;
    ReconReport heldout;
};

// Shuffles `embeddings` deterministically, holds out a quarter, and trains
// one PSG per objective {L2, L2+L_dist, L1+L_dist} from identical inits.
// Reconstructions go through the posterior mean (no sampling).
std::vector<AblationRow> ablate_psg_objectives(
    const std::vector<spkemb::SpeakerEmbedding>& embeddings, const cfg::RunConfig::Psg& cfg,
    std::uint32_t seed);

enum class Scenario { sxu, uxu, sxp, uxp };
const char* scenario_name(Scenario s);

struct ScenarioReport {
    Scenario scenario = Scenario::sxu;
    double eer = 0.0;
    double threshold = 0.0;
    int n_trials = 0;
    double baseline_eer = 0.0;  // same trial design on unconverted audio
};

struct ScenarioResult {
    ScenarioReport report;
    ScoreSet scores;
};

struct ScenarioRun {
    std::vector<ScenarioResult> scenarios;  // SxU, UxU, SxP, UxP
};

// Four-way de-identification matrix. Sources are seen (train) or unseen
// (test) speakers; targets are averaged unseen-speaker embeddings or PSG
// samples, assigned per utterance. Every source utterance is vocoded through
// the conversion model and scored by the adversary encoder against 10-crop
// averaged enrollments: one genuine trial (true source) plus one impostor
// trial per other pool speaker. Throws if the corpora share a speaker.
ScenarioRun run_scenarios(const vc::VcModel& vc_model, const psg::PsgModel& psg_model,
                          const spkemb::SpeakerEncoderModel& pipeline_encoder,
                          const spkemb::SpeakerEncoderModel& adversary_encoder,
                          const dsp::Corpus& corpus_train, const dsp::Corpus& corpus_test,
                          const cfg::RunConfig::Eval& cfg, std::uint32_t seed);

// CSV `trial_id,label,score`
void write_scores_csv(const std::filesystem::path& path, const ScoreSet& scores);
ScoreSet read_scores_csv(const std::filesystem::path& path);

// CSV `scenario,eer,threshold,n_trials,baseline_eer`
void write_scenario_csv(const std::filesystem::path& path,
                        const std::vector<ScenarioReport>& reports);

}  // namespace deidvc::eval
