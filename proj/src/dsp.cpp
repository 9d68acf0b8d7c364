#include "deidvc/dsp.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace deidvc::dsp {

namespace {

constexpr double kPi = 3.14159265358979323846;

using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

[[noreturn]] void fail(const std::string& what) { throw std::runtime_error(what); }

// ---- FFT: iterative radix-2, in-place, double precision internally ----

void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                std::complex<double> u = a[i + k];
                std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    if (inverse) {
        for (auto& x : a) x /= static_cast<double>(n);
    }
}

const std::vector<double>& hann_window() {
    static const std::vector<double> w = [] {
        std::vector<double> v(kFftSize);
        for (int n = 0; n < kFftSize; ++n)
            v[n] = 0.5 - 0.5 * std::cos(2.0 * kPi * n / kFftSize);  // periodic
        return v;
    }();
    return w;
}

int frame_count(std::size_t samples) {
    if (samples < static_cast<std::size_t>(kFftSize)) return 0;
    return 1 + static_cast<int>((samples - kFftSize) / kHopSize);
}

// One STFT frame: windowed FFT, complex spectrum of the first kNumBins bins.
void stft_frame(const std::vector<float>& x, int frame,
                std::vector<std::complex<double>>& buf) {
    const auto& w = hann_window();
    buf.assign(kFftSize, {0.0, 0.0});
    const std::size_t off = static_cast<std::size_t>(frame) * kHopSize;
    for (int n = 0; n < kFftSize; ++n)
        buf[n] = {static_cast<double>(x[off + n]) * w[n], 0.0};
    fft_inplace(buf, false);
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::uint32_t mix_seed(std::initializer_list<std::uint32_t> parts) {
    std::seed_seq seq(parts.begin(), parts.end());
    std::uint32_t out[1];
    seq.generate(out, out + 1);
    return out[0];
}

// Two-pole resonator at center fc with bandwidth bw, applied in place free of state.
std::vector<float> resonate(const std::vector<float>& x, float fc, float bw) {
    const double r = std::exp(-kPi * bw / kSampleRate);
    const double a1 = 2.0 * r * std::cos(2.0 * kPi * fc / kSampleRate);
    const double a2 = -r * r;
    const double g = 1.0 - r;
    std::vector<float> y(x.size(), 0.0f);
    double y1 = 0.0, y2 = 0.0;
    for (std::size_t n = 0; n < x.size(); ++n) {
        double v = g * x[n] + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = v;
        y[n] = static_cast<float>(v);
    }
    return y;
}

void peak_normalize(std::vector<float>& x, float peak) {
    float m = 0.0f;
    for (float v : x) m = std::max(m, std::fabs(v));
    if (m > 0.0f) {
        const float s = peak / m;
        for (float& v : x) v *= s;
    }
}

// Attenuate-only: quiet input stays quiet instead of being blown up to peak.
void limit_peak(std::vector<float>& x, float peak) {
    float m = 0.0f;
    for (float v : x) m = std::max(m, std::fabs(v));
    if (m > peak) {
        const float s = peak / m;
        for (float& v : x) v *= s;
    }
}

// |window-normalized DFT bin| <= max|x|, so log10 of the scaled magnitude
// lands in [log_floor, 0] for samples in [-1, 1]
double window_gain() {
    static const double g = [] {
        double s = 0.0;
        for (double w : hann_window()) s += w;
        return s;
    }();
    return g;
}

}  // namespace

// ---- WAV I/O ----

Waveform load_wav(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("load_wav: cannot open " + path.string());

    char riff[4], wave[4];
    std::uint32_t riff_size = 0;
    f.read(riff, 4);
    f.read(reinterpret_cast<char*>(&riff_size), 4);
    f.read(wave, 4);
    if (!f || std::memcmp(riff, "RIFF", 4) != 0 || std::memcmp(wave, "WAVE", 4) != 0)
        fail("load_wav: not a RIFF/WAVE file: " + path.string());

    bool have_fmt = false;
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    std::vector<std::int16_t> pcm;

    while (f) {
        char id[4];
        std::uint32_t size = 0;
        f.read(id, 4);
        f.read(reinterpret_cast<char*>(&size), 4);
        if (!f) break;
        if (std::memcmp(id, "fmt ", 4) == 0) {
            std::vector<char> body(size);
            f.read(body.data(), size);
            if (size < 16) fail("load_wav: malformed fmt chunk: " + path.string());
            std::memcpy(&format, body.data() + 0, 2);
            std::memcpy(&channels, body.data() + 2, 2);
            std::memcpy(&rate, body.data() + 4, 4);
            std::memcpy(&bits, body.data() + 14, 2);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            pcm.resize(size / 2);
            f.read(reinterpret_cast<char*>(pcm.data()), static_cast<std::streamsize>(pcm.size() * 2));
        } else {
            f.seekg(size + (size & 1), std::ios::cur);
        }
    }
    if (!have_fmt) fail("load_wav: missing fmt chunk: " + path.string());
    if (format != 1) fail("load_wav: only PCM supported, got format tag " + std::to_string(format));
    if (channels != 1) fail("load_wav: expected mono, got " + std::to_string(channels) + " channels");
    if (rate != kSampleRate)
        fail("load_wav: expected 16000 Hz, got " + std::to_string(rate) + " (no resampling)");
    if (bits != 16) fail("load_wav: expected 16-bit samples, got " + std::to_string(bits));

    Waveform wav;
    wav.samples.resize(pcm.size());
    for (std::size_t i = 0; i < pcm.size(); ++i)
        wav.samples[i] = static_cast<float>(pcm[i]) / 32768.0f;
    return wav;
}

void save_wav(const std::filesystem::path& path, const Waveform& wav) {
    if (wav.sample_rate != kSampleRate) fail("save_wav: sample_rate must be 16000");
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("save_wav: cannot open " + path.string());

    const std::uint32_t data_size = static_cast<std::uint32_t>(wav.samples.size() * 2);
    const std::uint32_t riff_size = 36 + data_size;
    const std::uint16_t format = 1, channels = 1, bits = 16;
    const std::uint32_t rate = kSampleRate;
    const std::uint32_t byte_rate = rate * 2;
    const std::uint16_t block_align = 2;
    const std::uint32_t fmt_size = 16;

    f.write("RIFF", 4);
    f.write(reinterpret_cast<const char*>(&riff_size), 4);
    f.write("WAVE", 4);
    f.write("fmt ", 4);
    f.write(reinterpret_cast<const char*>(&fmt_size), 4);
    f.write(reinterpret_cast<const char*>(&format), 2);
    f.write(reinterpret_cast<const char*>(&channels), 2);
    f.write(reinterpret_cast<const char*>(&rate), 4);
    f.write(reinterpret_cast<const char*>(&byte_rate), 4);
    f.write(reinterpret_cast<const char*>(&block_align), 2);
    f.write(reinterpret_cast<const char*>(&bits), 2);
    f.write("data", 4);
    f.write(reinterpret_cast<const char*>(&data_size), 4);

    for (float s : wav.samples) {
        float c = std::clamp(s, -1.0f, 1.0f);
        int v = static_cast<int>(std::lrintf(c * 32768.0f));
        std::int16_t q = static_cast<std::int16_t>(std::clamp(v, -32768, 32767));
        f.write(reinterpret_cast<const char*>(&q), 2);
    }
    if (!f) fail("save_wav: write failed: " + path.string());
}

// ---- mel analysis ----

const std::vector<float>& mel_filterbank() {
    static const std::vector<float> fb = [] {
        std::vector<float> m(static_cast<std::size_t>(kNumMels) * kNumBins, 0.0f);
        const double mel_lo = hz_to_mel(kMelFmin);
        const double mel_hi = hz_to_mel(kMelFmax);
        std::vector<double> edges(kNumMels + 2);
        for (int i = 0; i < kNumMels + 2; ++i)
            edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (kNumMels + 1));
        const double bin_hz = static_cast<double>(kSampleRate) / kFftSize;
        for (int j = 0; j < kNumMels; ++j) {
            const double lo = edges[j], ctr = edges[j + 1], hi = edges[j + 2];
            for (int k = 0; k < kNumBins; ++k) {
                const double f = k * bin_hz;
                double w = 0.0;
                if (f > lo && f < ctr)
                    w = (f - lo) / (ctr - lo);
                else if (f >= ctr && f < hi)
                    w = (hi - f) / (hi - ctr);
                m[static_cast<std::size_t>(j) * kNumBins + k] = static_cast<float>(w);
            }
        }
        return m;
    }();
    return fb;
}

std::vector<float> stft_magnitude(const Waveform& wav, int& frames_out) {
    frames_out = frame_count(wav.samples.size());
    std::vector<float> mag(static_cast<std::size_t>(frames_out) * kNumBins);
    std::vector<std::complex<double>> buf;
    for (int t = 0; t < frames_out; ++t) {
        stft_frame(wav.samples, t, buf);
        for (int k = 0; k < kNumBins; ++k)
            mag[static_cast<std::size_t>(t) * kNumBins + k] = static_cast<float>(std::abs(buf[k]));
    }
    return mag;
}

MelSpectrogram mel_spectrogram(const Waveform& wav) {
    if (wav.samples.size() < static_cast<std::size_t>(kFftSize))
        fail("mel_spectrogram: input shorter than one FFT window (" +
             std::to_string(wav.samples.size()) + " < 1024 samples)");

    int frames = 0;
    std::vector<float> mag = stft_magnitude(wav, frames);

    const auto& fb = mel_filterbank();
    Eigen::Map<const Mat> M(fb.data(), kNumMels, kNumBins);
    Eigen::Map<const Mat> S(mag.data(), frames, kNumBins);

    MelSpectrogram mel;
    mel.frames = frames;
    mel.values.resize(static_cast<std::size_t>(frames) * kNumMels);
    Eigen::Map<Mat> out(mel.values.data(), frames, kNumMels);
    out = S * M.transpose() * static_cast<float>(1.0 / window_gain());

    for (float& v : mel.values) {
        float lg = std::log10(std::max(v, 1e-10f));
        lg = std::max(lg, kLogFloor);
        v = std::clamp((lg - kLogFloor) / -kLogFloor, 0.0f, 1.0f);
    }
    return mel;
}

double spectral_convergence(const Waveform& wav, const std::vector<float>& target_magnitude,
                            int frames) {
    int got = 0;
    std::vector<float> mag = stft_magnitude(wav, got);
    const std::size_t n = static_cast<std::size_t>(std::min(got, frames)) * kNumBins;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(mag[i]) - target_magnitude[i];
        num += d * d;
        den += static_cast<double>(target_magnitude[i]) * target_magnitude[i];
    }
    return den > 0.0 ? std::sqrt(num / den) : 0.0;
}

// ---- Griffin-Lim ----

namespace {

// Overlap-add inverse STFT with Hann synthesis window.
Waveform istft(const std::vector<std::vector<std::complex<double>>>& spectra) {
    const int frames = static_cast<int>(spectra.size());
    const auto& w = hann_window();
    const std::size_t len = static_cast<std::size_t>(frames - 1) * kHopSize + kFftSize;
    std::vector<double> acc(len, 0.0), norm(len, 0.0);
    std::vector<std::complex<double>> buf(kFftSize);
    for (int t = 0; t < frames; ++t) {
        // rebuild the full conjugate-symmetric spectrum from the half kept
        for (int k = 0; k < kNumBins; ++k) buf[k] = spectra[t][k];
        for (int k = kNumBins; k < kFftSize; ++k) buf[k] = std::conj(spectra[t][kFftSize - k]);
        fft_inplace(buf, true);
        const std::size_t off = static_cast<std::size_t>(t) * kHopSize;
        for (int n = 0; n < kFftSize; ++n) {
            acc[off + n] += buf[n].real() * w[n];
            norm[off + n] += w[n] * w[n];
        }
    }
    Waveform out;
    out.samples.resize(len);
    for (std::size_t i = 0; i < len; ++i)
        out.samples[i] = norm[i] > 1e-8 ? static_cast<float>(acc[i] / norm[i]) : 0.0f;
    return out;
}

}  // namespace

std::vector<float> mel_to_linear_magnitude(const MelSpectrogram& mel) {
    const int frames = mel.frames;

    // denormalize back to linear amplitude, undoing the window-gain scaling;
    // the floor amplitude is subtracted so floored cells invert to true silence
    const float floor_amp = std::pow(10.0f, kLogFloor);
    Mat melamp(frames, kNumMels);
    for (int t = 0; t < frames; ++t)
        for (int m = 0; m < kNumMels; ++m)
            melamp(t, m) = (std::pow(10.0f, mel.at(t, m) * -kLogFloor + kLogFloor) - floor_amp) *
                           static_cast<float>(window_gain());

    // least-squares linear spectrogram: S = A Mᵀ (M Mᵀ)⁻¹ row by row, clamped >= 0
    static const Mat pinv = [] {
        const auto& f = mel_filterbank();
        Eigen::Map<const Mat> Mm(f.data(), kNumMels, kNumBins);
        Mat gram = Mm * Mm.transpose();
        gram.diagonal().array() += 1e-6f;  // regularize: edge filters overlap heavily
        return Mat(Mm.transpose() * gram.ldlt().solve(Mat::Identity(kNumMels, kNumMels)));
    }();
    Mat lin = melamp * pinv.transpose();
    lin = lin.cwiseMax(0.0f);

    std::vector<float> out(static_cast<std::size_t>(frames) * kNumBins);
    Eigen::Map<Mat>(out.data(), frames, kNumBins) = lin;
    return out;
}

Waveform griffin_lim(const MelSpectrogram& mel, int iterations) {
    if (iterations < 1) fail("griffin_lim: iterations must be >= 1");
    const int frames = mel.frames;
    const std::vector<float> linbuf = mel_to_linear_magnitude(mel);
    Eigen::Map<const Mat> lin(linbuf.data(), frames, kNumBins);

    // phase recovery, zero initial phase for determinism
    std::vector<std::vector<std::complex<double>>> spectra(
        frames, std::vector<std::complex<double>>(kNumBins));
    for (int t = 0; t < frames; ++t)
        for (int k = 0; k < kNumBins; ++k) spectra[t][k] = {static_cast<double>(lin(t, k)), 0.0};

    Waveform x = istft(spectra);
    std::vector<std::complex<double>> buf;
    for (int it = 1; it < iterations; ++it) {
        for (int t = 0; t < frames; ++t) {
            stft_frame(x.samples, t, buf);
            for (int k = 0; k < kNumBins; ++k) {
                const double a = std::abs(buf[k]);
                spectra[t][k] = a > 1e-12 ? buf[k] * (static_cast<double>(lin(t, k)) / a)
                                          : std::complex<double>(lin(t, k), 0.0);
            }
        }
        x = istft(spectra);
    }
    limit_peak(x.samples, 0.95f);
    return x;
}

// ---- synthetic corpus ----

SynthSpeakerSpec draw_speaker_spec(std::uint32_t corpus_seed, int speaker_index) {
    std::mt19937 rng(mix_seed({0x5eedu, corpus_seed, static_cast<std::uint32_t>(speaker_index)}));
    SynthSpeakerSpec s;
    char id[32];
    std::snprintf(id, sizeof id, "spk%u_%02d", corpus_seed, speaker_index);
    s.speaker_id = id;
    s.seed = mix_seed({0x51d5u, corpus_seed, static_cast<std::uint32_t>(speaker_index)});
    s.f0 = std::uniform_real_distribution<float>(100.0f, 300.0f)(rng);
    s.formant_centers[0] = std::uniform_real_distribution<float>(300.0f, 900.0f)(rng);
    s.formant_centers[1] = std::uniform_real_distribution<float>(1100.0f, 2200.0f)(rng);
    s.formant_centers[2] = std::uniform_real_distribution<float>(2400.0f, 3400.0f)(rng);
    for (float& g : s.formant_gains) g = std::uniform_real_distribution<float>(0.5f, 1.0f)(rng);
    return s;
}

Waveform synth_utterance(const SynthSpeakerSpec& spec, std::uint32_t corpus_seed, int utt_index,
                         double utt_seconds) {
    std::mt19937 rng(mix_seed({0x077u, corpus_seed, spec.seed, static_cast<std::uint32_t>(utt_index)}));
    const std::size_t n = static_cast<std::size_t>(utt_seconds * kSampleRate);

    std::uniform_real_distribution<float> uni(-1.0f, 1.0f);

    // glottal pulse train with per-period jitter around the speaker's f0
    std::vector<float> exc(n, 0.0f);
    double pos = 0.0;
    float f0 = spec.f0;
    while (pos < static_cast<double>(n)) {
        exc[static_cast<std::size_t>(pos)] = 1.0f;
        f0 = std::clamp(spec.f0 * (1.0f + 0.02f * uni(rng)), 0.95f * spec.f0, 1.05f * spec.f0);
        pos += kSampleRate / f0;
    }
    for (float& v : exc) v += 0.002f * uni(rng);  // aspiration noise

    std::vector<float> y(n, 0.0f);
    for (int k = 0; k < 3; ++k) {
        std::vector<float> band = resonate(exc, spec.formant_centers[k], 150.0f);
        for (std::size_t i = 0; i < n; ++i) y[i] += spec.formant_gains[k] * band[i];
    }

    // slow amplitude envelope, kept well above zero so no frame goes silent
    const float env_hz = std::uniform_real_distribution<float>(0.5f, 2.5f)(rng);
    const float env_ph = std::uniform_real_distribution<float>(0.0f, 2.0f * kPi)(rng);
    for (std::size_t i = 0; i < n; ++i) {
        const float t = static_cast<float>(i) / kSampleRate;
        y[i] *= 0.65f + 0.3f * std::sin(2.0f * kPi * env_hz * t + env_ph);
    }

    peak_normalize(y, 0.9f);
    Waveform out;
    out.samples = std::move(y);
    return out;
}

Corpus synth_corpus(int n_speakers, int utts_per_speaker, double utt_seconds,
                    std::uint32_t seed, const std::filesystem::path& out_dir) {
    if (n_speakers < 2) fail("synth_corpus: need at least 2 speakers");
    std::filesystem::create_directories(out_dir);

    Corpus corpus;
    corpus.root = out_dir;
    std::ostringstream manifest;
    manifest << "speaker_id,utt_id,path,seconds\n";

    for (int s = 0; s < n_speakers; ++s) {
        const SynthSpeakerSpec spec = draw_speaker_spec(seed, s);
        std::filesystem::create_directories(out_dir / spec.speaker_id);
        for (int u = 0; u < utts_per_speaker; ++u) {
            char utt_id[16];
            std::snprintf(utt_id, sizeof utt_id, "u%03d", u);
            const Waveform wav = synth_utterance(spec, seed, u, utt_seconds);
            const std::string rel = spec.speaker_id + "/" + utt_id + ".wav";
            save_wav(out_dir / rel, wav);
            char secs[32];
            std::snprintf(secs, sizeof secs, "%.3f", wav.seconds());
            manifest << spec.speaker_id << ',' << utt_id << ',' << rel << ',' << secs << '\n';
            corpus.items.push_back({spec.speaker_id, utt_id, rel, wav.seconds()});
        }
    }
    std::ofstream mf(out_dir / "manifest.csv", std::ios::binary);
    mf << manifest.str();
    if (!mf) fail("synth_corpus: cannot write manifest in " + out_dir.string());
    return corpus;
}

Corpus load_manifest(const std::filesystem::path& corpus_dir) {
    std::ifstream f(corpus_dir / "manifest.csv");
    if (!f) fail("load_manifest: cannot open " + (corpus_dir / "manifest.csv").string());
    Corpus corpus;
    corpus.root = corpus_dir;
    std::string line;
    if (!std::getline(f, line) || line != "speaker_id,utt_id,path,seconds")
        fail("load_manifest: bad header in " + (corpus_dir / "manifest.csv").string());
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        CorpusItem item;
        std::string secs;
        if (!std::getline(ss, item.speaker_id, ',') || !std::getline(ss, item.utt_id, ',') ||
            !std::getline(ss, item.path, ',') || !std::getline(ss, secs))
            fail("load_manifest: malformed row: " + line);
        item.seconds = std::stod(secs);
        corpus.items.push_back(std::move(item));
    }
    return corpus;
}

std::vector<std::string> Corpus::speaker_ids() const {
    std::vector<std::string> ids;
    std::set<std::string> seen;
    for (const auto& it : items)
        if (seen.insert(it.speaker_id).second) ids.push_back(it.speaker_id);
    return ids;
}

std::vector<const CorpusItem*> Corpus::utterances_of(const std::string& speaker_id) const {
    std::vector<const CorpusItem*> out;
    for (const auto& it : items)
        if (it.speaker_id == speaker_id) out.push_back(&it);
    return out;
}

}  // namespace deidvc::dsp
