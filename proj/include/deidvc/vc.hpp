#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "deidvc/checkpoint.hpp"
#include "deidvc/config.hpp"
#include "deidvc/dsp.hpp"
#include "deidvc/nn.hpp"
#include "deidvc/spkemb.hpp"

namespace deidvc::vc {

inline constexpr int kContentDim = 64;
inline constexpr int kDownsample = 32;

// Conversion autoencoder: content encoder with a 32x temporal bottleneck,
// decoder conditioned on a 256-d speaker embedding, residual post-net.
struct VcModel {
    nn::ParamStore params;
    std::uint32_t seed = 0;
    int stage = 0;       // highest completed training stage
    int steps_done = 0;
};

VcModel make_vc_model(std::uint32_t seed);

// mel [T,80] (T multiple of 32) -> code [T/32,64]
numcore::Var apply_content_encoder(numcore::Tape& t, const nn::VarMap& v, numcore::Var mel);
// code [Tc,64] + spk [1,256] -> (raw [32*Tc,80], refined = raw + postnet residual)
struct DecodeVars {
    numcore::Var raw;
    numcore::Var refined;
};
DecodeVars apply_decoder(numcore::Tape& t, const nn::VarMap& v, numcore::Var code,
                         numcore::Var spk);

// ---- plain-value front ends ----
struct ContentCode {
    int frames = 0;  // input frames / 32
    std::vector<float> values;  // row-major frames x 64
};
struct ConversionOutput {
    dsp::MelSpectrogram raw;
    dsp::MelSpectrogram refined;
};

ContentCode encode_content(const VcModel& model, const dsp::MelSpectrogram& mel);
// clamp=true bounds both outputs to [0,1] (inference); losses use clamp=false
ConversionOutput decode(const VcModel& model, const ContentCode& code,
                        const spkemb::SpeakerEmbedding& spk, bool clamp = true);

// ---- losses ----
struct Sample {
    numcore::Tensor mel;                 // [T,80] crop, T multiple of 32
    spkemb::SpeakerEmbedding spk;        // S1 (source speaker)
    std::string speaker_id;
};
struct PairSample {
    numcore::Tensor mel;
    spkemb::SpeakerEmbedding spk_src;    // S1
    spkemb::SpeakerEmbedding spk_tgt;    // S2, different speaker
    std::string src_id, tgt_id;
};
struct LossTerms {
    numcore::Var recon, recon0, content, total;
    std::optional<numcore::Var> content_consist, speaker_consist;
};

struct LossWeights {
    float mu = 1.0f;
    float lambda = 1.0f;
    float alpha = 0.0f;
    float beta = 0.0f;
};

LossTerms loss_stage1(numcore::Tape& t, const nn::VarMap& v, const std::vector<Sample>& batch,
                      const LossWeights& w);
// es_vars: frozen speaker-encoder binding on the same tape
LossTerms loss_stage2(numcore::Tape& t, const nn::VarMap& v, const nn::VarMap& es_vars,
                      const std::vector<PairSample>& batch, const LossWeights& w);

// ---- training ----
struct TraceRow {
    int step = 0;
    double recon = 0.0, recon0 = 0.0, content = 0.0, total = 0.0;
    std::optional<double> content_consist, speaker_consist;
};

struct TrainVcResult {
    std::vector<TraceRow> trace;
};

// Trains in place for cfg.stage{1,2}_steps depending on `stage`. Utterance
// mels come from `corpus` minus each speaker's last utterance (held out).
// Stage 2 requires model.stage >= 1. The speaker encoder stays frozen.
TrainVcResult train_vc(VcModel& model, const dsp::Corpus& corpus,
                       const spkemb::SpeakerEncoderModel& spk_encoder,
                       const cfg::RunConfig::Vc& cfg, int stage, std::uint32_t seed);

void write_loss_trace(const std::filesystem::path& path, const std::vector<TraceRow>& trace);

// ---- inference ----
struct ConvertResult {
    dsp::MelSpectrogram refined;  // frame count equals the source analysis
    dsp::Waveform wav;
};
ConvertResult convert(const VcModel& model, const dsp::Waveform& source,
                      const spkemb::SpeakerEmbedding& target, int griffin_lim_iterations);
// mel-domain variant used by evaluation (no vocoder round-trip)
dsp::MelSpectrogram convert_mel(const VcModel& model, const dsp::MelSpectrogram& source,
                                const spkemb::SpeakerEmbedding& target);

void save_vc_model(const std::filesystem::path& path, const VcModel& model);
VcModel load_vc_model(const std::filesystem::path& path);

}  // namespace deidvc::vc
