// deidvc: desk-scale speaker de-identification pipeline driver.
//
// Exit codes: 0 success, 1 validation error (bad flags, missing inputs),
// 2 runtime error. All randomness flows from --seed; artifacts land under
// --out-dir next to an artifacts.csv manifest.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "deidvc/config.hpp"
#include "deidvc/dsp.hpp"
#include "deidvc/eval.hpp"
#include "deidvc/gradsuite.hpp"
#include "deidvc/psg.hpp"
#include "deidvc/spkemb.hpp"
#include "deidvc/vc.hpp"

namespace fs = std::filesystem;
using namespace deidvc;

namespace {

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_file(const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw ValidationError(what + " not found: " + p.string());
}

void require_dir(const fs::path& p, const std::string& what) {
    if (!fs::is_directory(p)) throw ValidationError(what + " not found: " + p.string());
}

// records every artifact a command writes; flushed as out_dir/artifacts.csv
class ArtifactLog {
public:
    explicit ArtifactLog(fs::path out_dir) : out_dir_(std::move(out_dir)) {
        fs::create_directories(out_dir_);
    }
    fs::path add(const std::string& name) {
        names_.push_back(name);
        return out_dir_ / name;
    }
    ~ArtifactLog() {
        std::ofstream out(out_dir_ / "artifacts.csv");
        out << "artifact\n";
        for (const std::string& n : names_) out << n << "\n";
    }

private:
    fs::path out_dir_;
    std::vector<std::string> names_;
};

std::vector<spkemb::SpeakerEmbedding> corpus_embeddings(const dsp::Corpus& corpus,
                                                        const spkemb::SpeakerEncoderModel& enc) {
    std::vector<spkemb::SpeakerEmbedding> embs;
    embs.reserve(corpus.items.size());
    for (const dsp::CorpusItem& item : corpus.items) {
        dsp::Waveform wav = dsp::load_wav(corpus.root / item.path);
        embs.push_back(spkemb::embed_utterance(enc, dsp::mel_spectrogram(wav)));
    }
    return embs;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale voice conversion de-identification pipeline"};
    app.require_subcommand(1);
    app.fallthrough();  // --seed/--config/--out-dir may follow the subcommand

    std::uint32_t seed = 1;
    std::string config_path;
    std::string out_dir = ".";
    app.add_option("--seed", seed, "master random seed")->capture_default_str();
    app.add_option("--config", config_path, "run configuration file");
    app.add_option("--out-dir", out_dir, "artifact directory")->capture_default_str();

    // synth-corpus
    auto* c_synth = app.add_subcommand("synth-corpus", "generate the synthetic corpus");
    int synth_speakers = 0;
    c_synth->add_option("--speakers", synth_speakers,
                        "speaker count (default: the [data] section)");

    // train-spk
    auto* c_spk = app.add_subcommand("train-spk", "train a speaker encoder");
    std::string spk_corpus;
    c_spk->add_option("--corpus", spk_corpus, "corpus directory")->required();

    // train-vc
    auto* c_vc = app.add_subcommand("train-vc", "train the conversion autoencoder");
    int vc_stage = 1;
    std::string vc_corpus, vc_encoder, vc_init;
    c_vc->add_option("--stage", vc_stage, "training stage")->check(CLI::Range(1, 2))->required();
    c_vc->add_option("--corpus", vc_corpus, "corpus directory")->required();
    c_vc->add_option("--spk-encoder", vc_encoder, "speaker encoder checkpoint")->required();
    c_vc->add_option("--init", vc_init, "checkpoint to continue from (stage 2)");

    // train-psg / finetune-psg
    auto* c_psg = app.add_subcommand("train-psg", "train the pseudo speaker generator");
    std::string psg_corpus, psg_encoder;
    c_psg->add_option("--corpus", psg_corpus, "corpus directory")->required();
    c_psg->add_option("--spk-encoder", psg_encoder, "speaker encoder checkpoint")->required();

    auto* c_fine = app.add_subcommand("finetune-psg", "continue PSG training on new data");
    std::string fine_corpus, fine_encoder, fine_init;
    c_fine->add_option("--corpus", fine_corpus, "corpus directory")->required();
    c_fine->add_option("--spk-encoder", fine_encoder, "speaker encoder checkpoint")->required();
    c_fine->add_option("--init", fine_init, "PSG checkpoint to continue from")->required();

    // gen-speakers
    auto* c_gen = app.add_subcommand("gen-speakers", "sample pseudo speaker embeddings");
    std::string gen_model, gen_level = "utterance";
    int gen_n = 0;
    c_gen->add_option("--model", gen_model, "PSG checkpoint")->required();
    c_gen->add_option("--n", gen_n, "number of embeddings")->required();
    c_gen->add_option("--level", gen_level, "assignment level")
        ->check(CLI::IsMember({"utterance", "speaker"}));

    // convert
    auto* c_conv = app.add_subcommand("convert", "convert one utterance");
    std::string conv_model, conv_input, conv_target, conv_psg, conv_target_id;
    c_conv->add_option("--model", conv_model, "conversion checkpoint")->required();
    c_conv->add_option("--input", conv_input, "source WAV")->required();
    c_conv->add_option("--target", conv_target, "embedding CSV path or 'pseudo'")->required();
    c_conv->add_option("--psg", conv_psg, "PSG checkpoint (with --target pseudo)");
    c_conv->add_option("--target-id", conv_target_id, "row id inside the embedding CSV");

    // eval-eer
    auto* c_eer = app.add_subcommand("eval-eer", "EER of a scores file");
    std::string eer_scores;
    c_eer->add_option("--scores", eer_scores, "trial scores CSV")->required();

    // eval-psg-ablation
    auto* c_abl = app.add_subcommand("eval-psg-ablation", "reconstruction objective ablation");
    std::string abl_corpus, abl_encoder;
    c_abl->add_option("--corpus", abl_corpus, "corpus directory")->required();
    c_abl->add_option("--spk-encoder", abl_encoder, "speaker encoder checkpoint")->required();

    // run-scenarios
    auto* c_scen = app.add_subcommand("run-scenarios", "four-way de-identification matrix");
    std::string sc_vc, sc_psg, sc_pipe, sc_adv, sc_train, sc_test;
    c_scen->add_option("--vc", sc_vc, "conversion checkpoint")->required();
    c_scen->add_option("--psg", sc_psg, "PSG checkpoint")->required();
    c_scen->add_option("--spk-encoder", sc_pipe, "pipeline speaker encoder")->required();
    c_scen->add_option("--adversary", sc_adv, "adversary speaker encoder")->required();
    c_scen->add_option("--train-corpus", sc_train, "seen-speaker corpus")->required();
    c_scen->add_option("--test-corpus", sc_test, "unseen-speaker corpus")->required();

    // grad-check
    auto* c_grad = app.add_subcommand("grad-check", "finite-difference check of every loss");
    int grad_seeds = 10;
    double grad_tol = 1e-3;
    c_grad->add_option("--seeds", grad_seeds, "seed count")->capture_default_str();
    c_grad->add_option("--tol", grad_tol, "relative tolerance")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;  // flag mistakes are validation errors
    }

    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        cfg::RunConfig cfg;
        if (!config_path.empty()) {
            require_file(config_path, "config");
            cfg = cfg::load_config(config_path);
        }

        if (cmd == "synth-corpus") {
            ArtifactLog log(out_dir);
            if (synth_speakers < 0) throw ValidationError("--speakers must be positive");
            dsp::Corpus corpus = dsp::synth_corpus(
                synth_speakers > 0 ? synth_speakers : cfg.data.n_speakers,
                cfg.data.utts_per_speaker, cfg.data.utt_seconds, seed, out_dir);
            log.add("manifest.csv");
            std::printf("synth-corpus: %zu utterances, %zu speakers\n", corpus.items.size(),
                        corpus.speaker_ids().size());
        } else if (cmd == "train-spk") {
            require_dir(spk_corpus, "corpus");
            dsp::Corpus corpus = dsp::load_manifest(spk_corpus);
            ArtifactLog log(out_dir);
            spkemb::TrainSpkResult r = spkemb::train_speaker_encoder(corpus, cfg.spkemb, seed);
            spkemb::save_speaker_encoder(log.add("spk_encoder.ckpt"), r.model);
            std::printf("train-spk: accuracy %.3f\n", r.train_accuracy);
        } else if (cmd == "train-vc") {
            require_dir(vc_corpus, "corpus");
            require_file(vc_encoder, "speaker encoder checkpoint");
            vc::VcModel model;
            if (vc_stage == 2) {
                if (vc_init.empty() || !fs::exists(vc_init))
                    throw ValidationError("stage-1 checkpoint required (--init): " +
                                          (vc_init.empty() ? std::string("not given") : vc_init));
                model = vc::load_vc_model(vc_init);
            } else {
                model = vc::make_vc_model(seed);
            }
            dsp::Corpus corpus = dsp::load_manifest(vc_corpus);
            spkemb::SpeakerEncoderModel es = spkemb::load_speaker_encoder(vc_encoder);
            ArtifactLog log(out_dir);
            vc::TrainVcResult r = vc::train_vc(model, corpus, es, cfg.vc, vc_stage, seed);
            const std::string tag = "vc_stage" + std::to_string(vc_stage);
            vc::save_vc_model(log.add(tag + ".ckpt"), model);
            vc::write_loss_trace(log.add(tag + "_trace.csv"), r.trace);
            std::printf("train-vc: stage %d, final total %.5f\n", vc_stage,
                        r.trace.empty() ? 0.0 : r.trace.back().total);
        } else if (cmd == "train-psg" || cmd == "finetune-psg") {
            const bool fine = cmd == "finetune-psg";
            const std::string& corpus_dir = fine ? fine_corpus : psg_corpus;
            const std::string& enc_path = fine ? fine_encoder : psg_encoder;
            require_dir(corpus_dir, "corpus");
            require_file(enc_path, "speaker encoder checkpoint");
            if (fine) require_file(fine_init, "PSG checkpoint");
            dsp::Corpus corpus = dsp::load_manifest(corpus_dir);
            spkemb::SpeakerEncoderModel es = spkemb::load_speaker_encoder(enc_path);
            psg::PsgModel model = fine ? psg::load_psg_model(fine_init)
                                       : psg::make_psg_model(seed);
            ArtifactLog log(out_dir);
            std::vector<spkemb::SpeakerEmbedding> embs = corpus_embeddings(corpus, es);
            psg::TrainPsgResult r = fine ? psg::finetune_psg(model, embs, cfg.psg, seed)
                                         : psg::train_psg(model, embs, cfg.psg, seed);
            psg::save_psg_model(log.add(fine ? "psg_finetuned.ckpt" : "psg.ckpt"), model);
            std::printf("%s: %zu embeddings, final epoch loss %.5f\n", cmd.c_str(), embs.size(),
                        r.epoch_loss.empty() ? 0.0 : r.epoch_loss.back());
        } else if (cmd == "gen-speakers") {
            require_file(gen_model, "PSG checkpoint");
            if (gen_n < 1) throw ValidationError("--n must be positive");
            psg::PsgModel model = psg::load_psg_model(gen_model);
            ArtifactLog log(out_dir);
            std::vector<psg::PseudoSpeaker> ps = psg::sample_pseudo(
                model, gen_n, seed,
                gen_level == "speaker" ? psg::AssignLevel::speaker
                                       : psg::AssignLevel::utterance);
            psg::write_pseudo_csv(log.add("pseudo_speakers.csv"), ps);
            std::printf("gen-speakers: %d %s-level embeddings\n", gen_n, gen_level.c_str());
        } else if (cmd == "convert") {
            require_file(conv_model, "conversion checkpoint");
            require_file(conv_input, "input WAV");
            spkemb::SpeakerEmbedding target;
            if (conv_target == "pseudo") {
                if (conv_psg.empty()) throw ValidationError("--target pseudo requires --psg");
                require_file(conv_psg, "PSG checkpoint");
                psg::PsgModel pm = psg::load_psg_model(conv_psg);
                target = psg::sample_pseudo(pm, 1, seed, psg::AssignLevel::utterance)[0].emb;
            } else {
                require_file(conv_target, "target embedding CSV");
                std::vector<spkemb::NamedEmbedding> rows =
                    spkemb::read_embedding_csv(conv_target);
                if (rows.empty()) throw ValidationError("target embedding CSV is empty");
                if (conv_target_id.empty()) {
                    target = rows.front().emb;
                } else {
                    auto it = std::find_if(rows.begin(), rows.end(), [&](const auto& r) {
                        return r.id == conv_target_id;
                    });
                    if (it == rows.end())
                        throw ValidationError("target id '" + conv_target_id +
                                              "' not in " + conv_target);
                    target = it->emb;
                }
            }
            vc::VcModel model = vc::load_vc_model(conv_model);
            dsp::Waveform wav = dsp::load_wav(conv_input);
            ArtifactLog log(out_dir);
            vc::ConvertResult r =
                vc::convert(model, wav, target, cfg.eval.griffin_lim_iterations);
            dsp::save_wav(log.add("converted.wav"), r.wav);
            std::printf("convert: %d frames -> %.2f s\n", r.refined.frames, r.wav.seconds());
        } else if (cmd == "eval-eer") {
            require_file(eer_scores, "scores CSV");
            eval::ScoreSet scores = eval::read_scores_csv(eer_scores);
            eval::EerResult r = eval::compute_eer(scores);
            ArtifactLog log(out_dir);
            std::ofstream out(log.add("eer.csv"));
            out << "eer,threshold,n_trials\n"
                << r.eer << "," << r.threshold << "," << scores.trials.size() << "\n";
            std::printf("eval-eer: eer %.4f threshold %.6f over %zu trials\n", r.eer,
                        r.threshold, scores.trials.size());
        } else if (cmd == "eval-psg-ablation") {
            require_dir(abl_corpus, "corpus");
            require_file(abl_encoder, "speaker encoder checkpoint");
            dsp::Corpus corpus = dsp::load_manifest(abl_corpus);
            spkemb::SpeakerEncoderModel es = spkemb::load_speaker_encoder(abl_encoder);
            ArtifactLog log(out_dir);
            std::vector<eval::AblationRow> rows =
                eval::ablate_psg_objectives(corpus_embeddings(corpus, es), cfg.psg, seed);
            std::ofstream out(log.add("ablation.csv"));
            out << "objective,split,mse,cos_sim\n";
            for (const eval::AblationRow& row : rows)
                for (const eval::ReconReport* rep : {&row.train, &row.heldout}) {
                    out << psg::objective_name(row.objective) << "," << rep->split << ","
                        << rep->mse << "," << rep->cos_sim << "\n";
                    std::printf("%-10s %-8s mse %.5f cos_sim %.4f\n",
                                psg::objective_name(row.objective), rep->split.c_str(),
                                rep->mse, rep->cos_sim);
                }
        } else if (cmd == "run-scenarios") {
            require_file(sc_vc, "conversion checkpoint");
            require_file(sc_psg, "PSG checkpoint");
            require_file(sc_pipe, "pipeline speaker encoder");
            require_file(sc_adv, "adversary speaker encoder");
            require_dir(sc_train, "train corpus");
            require_dir(sc_test, "test corpus");
            vc::VcModel vcm = vc::load_vc_model(sc_vc);
            psg::PsgModel psgm = psg::load_psg_model(sc_psg);
            spkemb::SpeakerEncoderModel pipe = spkemb::load_speaker_encoder(sc_pipe);
            spkemb::SpeakerEncoderModel adv = spkemb::load_speaker_encoder(sc_adv);
            dsp::Corpus train = dsp::load_manifest(sc_train);
            dsp::Corpus test = dsp::load_manifest(sc_test);
            ArtifactLog log(out_dir);
            eval::ScenarioRun run =
                eval::run_scenarios(vcm, psgm, pipe, adv, train, test, cfg.eval, seed);
            std::vector<eval::ScenarioReport> reports;
            for (const eval::ScenarioResult& sr : run.scenarios) {
                reports.push_back(sr.report);
                eval::write_scores_csv(
                    log.add(std::string("scores_") + eval::scenario_name(sr.report.scenario) +
                            ".csv"),
                    sr.scores);
                std::printf("%s: eer %.4f (baseline %.4f) over %d trials\n",
                            eval::scenario_name(sr.report.scenario), sr.report.eer,
                            sr.report.baseline_eer, sr.report.n_trials);
            }
            eval::write_scenario_csv(log.add("scenario_report.csv"), reports);
        } else if (cmd == "grad-check") {
            if (grad_seeds < 1) throw ValidationError("--seeds must be positive");
            std::vector<diag::GradCheckRow> rows =
                diag::grad_check_suite(seed, grad_seeds, grad_tol);
            bool all_pass = true;
            for (const char* loss : {"stage1", "stage2", "psg"}) {
                double worst = 0.0;
                bool pass = true;
                for (const diag::GradCheckRow& r : rows)
                    if (r.loss == loss) {
                        worst = std::max(worst, r.max_err);
                        pass = pass && r.pass;
                    }
                std::printf("%-7s max rel err %.3e %s\n", loss, worst, pass ? "PASS" : "FAIL");
                all_pass = all_pass && pass;
            }
            if (!all_pass) return 2;
        }
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "deidvc %s: %s\n", cmd.c_str(), e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "deidvc %s: %s\n", cmd.c_str(), e.what());
        return 2;
    }
    return 0;
}
