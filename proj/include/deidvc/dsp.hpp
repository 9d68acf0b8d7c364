#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace deidvc::dsp {

inline constexpr int kSampleRate = 16000;
inline constexpr int kFftSize = 1024;
inline constexpr int kHopSize = 256;
inline constexpr int kNumBins = kFftSize / 2 + 1;
inline constexpr int kNumMels = 80;
inline constexpr float kMelFmin = 0.0f;
inline constexpr float kMelFmax = 8000.0f;
inline constexpr float kLogFloor = -5.0f;  // log10 amplitude floor before [0,1] mapping

struct Waveform {
    int sample_rate = kSampleRate;
    std::vector<float> samples;  // in [-1, 1]

    double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

// T x 80 log-mel matrix, normalized to [0,1] via (log10(m) + 5) / 5, clipped.
struct MelSpectrogram {
    int frames = 0;
    std::vector<float> values;  // row-major frames x kNumMels

    float at(int t, int m) const { return values[static_cast<std::size_t>(t) * kNumMels + m]; }
    float& at(int t, int m) { return values[static_cast<std::size_t>(t) * kNumMels + m]; }
};

struct SynthSpeakerSpec {
    std::string speaker_id;
    float f0 = 0.0f;                  // 80..400 Hz
    float formant_centers[3] = {};    // strictly increasing, below Nyquist
    float formant_gains[3] = {};
    std::uint32_t seed = 0;
};

struct CorpusItem {
    std::string speaker_id;
    std::string utt_id;
    std::string path;  // relative to the corpus directory
    double seconds = 0.0;
};

struct Corpus {
    std::filesystem::path root;
    std::vector<CorpusItem> items;

    std::vector<std::string> speaker_ids() const;
    std::vector<const CorpusItem*> utterances_of(const std::string& speaker_id) const;
};

// ---- audio I/O: RIFF PCM 16-bit mono 16 kHz only, no resampling ----
Waveform load_wav(const std::filesystem::path& path);
void save_wav(const std::filesystem::path& path, const Waveform& wav);

// ---- analysis / synthesis ----
// frames = 1 + floor((len - 1024) / 256); throws if input shorter than one window
MelSpectrogram mel_spectrogram(const Waveform& wav);
Waveform griffin_lim(const MelSpectrogram& mel, int iterations);

// 80 x 513 triangular filterbank over 0..8 kHz, row-major
const std::vector<float>& mel_filterbank();

// ||  |STFT(x)| - target ||_F / ||target||_F, for convergence measurements
double spectral_convergence(const Waveform& wav, const std::vector<float>& target_magnitude,
                            int frames);
std::vector<float> stft_magnitude(const Waveform& wav, int& frames_out);
// Least-squares inversion of the filterbank, frames x 513, clamped >= 0.
std::vector<float> mel_to_linear_magnitude(const MelSpectrogram& mel);

// ---- synthetic corpus ----
SynthSpeakerSpec draw_speaker_spec(std::uint32_t corpus_seed, int speaker_index);
Waveform synth_utterance(const SynthSpeakerSpec& spec, std::uint32_t corpus_seed, int utt_index,
                         double utt_seconds);
// Writes WAVs plus manifest.csv; a pure function of its arguments.
Corpus synth_corpus(int n_speakers, int utts_per_speaker, double utt_seconds,
                    std::uint32_t seed, const std::filesystem::path& out_dir);

Corpus load_manifest(const std::filesystem::path& corpus_dir);

}  // namespace deidvc::dsp
