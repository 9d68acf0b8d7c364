#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "deidvc/checkpoint.hpp"
#include "deidvc/config.hpp"
#include "deidvc/dsp.hpp"
#include "deidvc/nn.hpp"

namespace deidvc::spkemb {

inline constexpr int kEmbeddingDim = 256;
inline constexpr int kMinFrames = 32;

struct SpeakerEmbedding {
    enum class Source { real, averaged, pseudo };
    std::vector<float> values;  // length 256, unit L2 norm
    Source source = Source::real;
};

const char* source_name(SpeakerEmbedding::Source s);
SpeakerEmbedding::Source source_from_name(const std::string& name);

// Frame-wise projection, temporal convolution, mean pooling, projection to
// 256-d, unit normalization. Stands in for a pretrained d-vector system.
struct SpeakerEncoderModel {
    nn::ParamStore params;
    std::uint32_t seed = 0;
    int trained_steps = 0;
};

SpeakerEncoderModel make_speaker_encoder(std::uint32_t seed);

// Differentiable graph: mel [T,80] -> unit-norm embedding [1,256]. `vars`
// comes from binding the model's params (as constants when frozen).
numcore::Var apply_speaker_encoder(numcore::Tape& tape, const nn::VarMap& vars, numcore::Var mel);

SpeakerEmbedding embed_utterance(const SpeakerEncoderModel& model, const dsp::MelSpectrogram& mel);
SpeakerEmbedding average_embeddings(const std::vector<SpeakerEmbedding>& embs);

struct TrainSpkResult {
    SpeakerEncoderModel model;        // classification head already discarded
    float train_accuracy = 0.0f;      // over the final quarter of steps
};

TrainSpkResult train_speaker_encoder(const dsp::Corpus& corpus, const cfg::RunConfig::Spkemb& cfg,
                                     std::uint32_t seed);

void save_speaker_encoder(const std::filesystem::path& path, const SpeakerEncoderModel& model);
SpeakerEncoderModel load_speaker_encoder(const std::filesystem::path& path);

// ---- embedding interchange CSV: id,kind,e0..e255 ----
struct NamedEmbedding {
    std::string id;
    SpeakerEmbedding emb;
};
void write_embedding_csv(const std::filesystem::path& path,
                         const std::vector<NamedEmbedding>& embs);
std::vector<NamedEmbedding> read_embedding_csv(const std::filesystem::path& path);

}  // namespace deidvc::spkemb
