#pragma once

#include <filesystem>
#include <string>

namespace deidvc::cfg {

// Sectioned key=value run configuration. Defaults are the desk-scale recipe;
// any key can be overridden from a config file.
struct RunConfig {
    struct Data {
        int n_speakers = 8;        // training corpus
        int n_test_speakers = 4;   // disjoint evaluation corpus
        int utts_per_speaker = 12;
        double utt_seconds = 2.5;
    } data;

    struct Spkemb {
        int steps = 400;
        int batch_size = 16;
        float lr = 1e-3f;
        int crop_frames = 125;  // ~2 s at hop 256 / 16 kHz
    } spkemb;

    struct Vc {
        float mu = 1.0f;
        float lambda = 1.0f;         // stage 2 raises this to 10
        float lambda_stage2 = 10.0f;
        float alpha = 10.0f;
        float beta = 0.1f;
        int stage1_steps = 1500;
        int stage2_steps = 300;
        int batch_size = 8;
        float lr = 1e-4f;
        int crop_frames = 128;
    } vc;

    struct Psg {
        float lambda_dist = 200.0f;
        float lr = 1e-3f;
        int epochs = 60;
        int batch_size = 32;
    } psg;

    struct Eval {
        int griffin_lim_iterations = 30;
        int enroll_crops = 10;  // 2 s crops averaged into each enrollment embedding
    } eval;
};

// Parses a sectioned key=value file; unknown sections or keys are rejected
// with the offending line number.
RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config_text(const std::string& text, const std::string& origin);

}  // namespace deidvc::cfg
