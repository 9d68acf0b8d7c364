#include "deidvc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace deidvc::eval {

namespace {

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw std::runtime_error("eval: zero-norm vector in cosine");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

const char* label_name(Label l) { return l == Label::genuine ? "genuine" : "impostor"; }

Label label_from_name(const std::string& s) {
    if (s == "genuine") return Label::genuine;
    if (s == "impostor") return Label::impostor;
    throw std::runtime_error("eval: unknown trial label '" + s + "'");
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

EerResult compute_eer(const ScoreSet& scores) {
    std::vector<double> genuine, impostor;
    for (const Trial& t : scores.trials) {
        if (!std::isfinite(t.score)) throw std::runtime_error("eval: non-finite trial score");
        (t.label == Label::genuine ? genuine : impostor).push_back(t.score);
    }
    if (genuine.empty() || impostor.empty())
        throw std::runtime_error("eval: score set needs both genuine and impostor trials");

    std::vector<double> distinct;
    distinct.reserve(scores.trials.size());
    for (const Trial& t : scores.trials) distinct.push_back(t.score);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    std::vector<double> candidates;
    candidates.reserve(2 * distinct.size());
    for (std::size_t i = 0; i < distinct.size(); ++i) {
        candidates.push_back(distinct[i]);
        if (i + 1 < distinct.size()) candidates.push_back(0.5 * (distinct[i] + distinct[i + 1]));
    }
    std::sort(candidates.begin(), candidates.end());

    EerResult best;
    double best_diff = std::numeric_limits<double>::infinity();
    for (double t : candidates) {
        std::size_t fa = 0, fr = 0;
        for (double s : impostor) fa += (s >= t);
        for (double s : genuine) fr += (s < t);
        const double far = static_cast<double>(fa) / impostor.size();
        const double frr = static_cast<double>(fr) / genuine.size();
        const double diff = std::fabs(far - frr);
        if (diff < best_diff) {  // strict: ties keep the lowest threshold
            best_diff = diff;
            best.eer = 0.5 * (far + frr);
            best.threshold = t;
        }
    }
    return best;
}

ReconReport embedding_metrics(
    const std::vector<std::pair<std::vector<float>, std::vector<float>>>& pairs,
    const std::string& split) {
    if (pairs.empty()) throw std::runtime_error("eval: embedding_metrics needs at least one pair");
    double mse = 0.0, cs = 0.0;
    for (const auto& [s, s_hat] : pairs) {
        if (s.size() != s_hat.size() || s.empty())
            throw std::runtime_error("eval: embedding pair dimension mismatch");
        double sq = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            const double d = static_cast<double>(s[i]) - s_hat[i];
            sq += d * d;
        }
        mse += sq / static_cast<double>(s.size());
        cs += cosine(s, s_hat);
    }
    ReconReport r;
    r.split = split;
    r.mse = mse / static_cast<double>(pairs.size());
    r.cos_sim = cs / static_cast<double>(pairs.size());
    return r;
}

std::vector<AblationRow> ablate_psg_objectives(
    const std::vector<spkemb::SpeakerEmbedding>& embeddings, const cfg::RunConfig::Psg& cfg,
    std::uint32_t seed) {
    if (embeddings.size() < 8)
        throw std::runtime_error("eval: ablation needs at least 8 embeddings");
    std::vector<std::size_t> order(embeddings.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937 rng(seed ^ 0x41424c41u);
    std::shuffle(order.begin(), order.end(), rng);

    const std::size_t n_held = std::max<std::size_t>(1, embeddings.size() / 4);
    std::vector<spkemb::SpeakerEmbedding> train, held;
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < order.size() - n_held ? train : held).push_back(embeddings[order[i]]);

    auto metrics = [](const psg::PsgModel& m, const std::vector<spkemb::SpeakerEmbedding>& embs,
                      const std::string& split) {
        std::vector<std::pair<std::vector<float>, std::vector<float>>> pairs;
        pairs.reserve(embs.size());
        for (const spkemb::SpeakerEmbedding& e : embs) {
            psg::LatentGaussian lg = psg::vae_encode(m, e);
            pairs.emplace_back(e.values, psg::psg_decode(m, lg.mu));
        }
        return embedding_metrics(pairs, split);
    };

    std::vector<AblationRow> rows;
    for (psg::ReconObjective obj :
         {psg::ReconObjective::l2, psg::ReconObjective::l2_dist, psg::ReconObjective::l1_dist}) {
        psg::PsgModel model = psg::make_psg_model(seed);
        psg::train_psg(model, train, cfg, seed, obj);
        AblationRow row;
        row.objective = obj;
        row.train = metrics(model, train, "train");
        row.heldout = metrics(model, held, "heldout");
        rows.push_back(std::move(row));
    }
    return rows;
}

const char* scenario_name(Scenario s) {
    switch (s) {
        case Scenario::sxu: return "SxU";
        case Scenario::uxu: return "UxU";
        case Scenario::sxp: return "SxP";
        case Scenario::uxp: return "UxP";
    }
    throw std::logic_error("eval: bad scenario");
}

namespace {

struct Utt {
    std::string speaker_id;
    std::string utt_id;
    dsp::Waveform wav;
    dsp::MelSpectrogram mel;
};

std::vector<Utt> load_utts(const dsp::Corpus& corpus) {
    std::vector<Utt> utts;
    utts.reserve(corpus.items.size());
    for (const dsp::CorpusItem& item : corpus.items) {
        Utt u;
        u.speaker_id = item.speaker_id;
        u.utt_id = item.utt_id;
        u.wav = dsp::load_wav(corpus.root / item.path);
        u.mel = dsp::mel_spectrogram(u.wav);
        utts.push_back(std::move(u));
    }
    return utts;
}

dsp::MelSpectrogram crop_mel(const dsp::MelSpectrogram& mel, int start, int frames) {
    dsp::MelSpectrogram out;
    out.frames = frames;
    out.values.assign(mel.values.begin() + static_cast<std::size_t>(start) * dsp::kNumMels,
                      mel.values.begin() + static_cast<std::size_t>(start + frames) * dsp::kNumMels);
    return out;
}

// averaged embedding of `n_crops` random 2 s crops drawn from a speaker's
// clean utterances; one rng per enrollment pass keeps the draw deterministic
std::map<std::string, spkemb::SpeakerEmbedding> enroll_speakers(
    const spkemb::SpeakerEncoderModel& encoder, const std::vector<Utt>& utts, int n_crops,
    std::uint32_t seed) {
    std::map<std::string, std::vector<const Utt*>> by_speaker;
    for (const Utt& u : utts) by_speaker[u.speaker_id].push_back(&u);

    std::mt19937 rng(seed);
    std::map<std::string, spkemb::SpeakerEmbedding> out;
    for (const auto& [id, list] : by_speaker) {
        std::vector<spkemb::SpeakerEmbedding> crops;
        for (int c = 0; c < n_crops; ++c) {
            const Utt& u = *list[rng() % list.size()];
            const int len = std::min(kEnrollCropFrames, u.mel.frames);
            const int span = u.mel.frames - len;
            const int start = span > 0 ? static_cast<int>(rng() % (span + 1)) : 0;
            crops.push_back(spkemb::embed_utterance(encoder, crop_mel(u.mel, start, len)));
        }
        out[id] = spkemb::average_embeddings(crops);
    }
    return out;
}

// one genuine trial against the true source plus one impostor trial per
// other pool speaker
void add_trials(ScoreSet& set, const std::string& prefix, const Utt& source,
                const spkemb::SpeakerEmbedding& probe,
                const std::map<std::string, spkemb::SpeakerEmbedding>& enrollments) {
    for (const auto& [id, enrolled] : enrollments) {
        Trial t;
        t.trial_id = prefix + ":" + source.speaker_id + "/" + source.utt_id + ":vs:" + id;
        t.label = id == source.speaker_id ? Label::genuine : Label::impostor;
        t.score = cosine(probe.values, enrolled.values);
        set.trials.push_back(std::move(t));
    }
}

}  // namespace

ScenarioRun run_scenarios(const vc::VcModel& vc_model, const psg::PsgModel& psg_model,
                          const spkemb::SpeakerEncoderModel& pipeline_encoder,
                          const spkemb::SpeakerEncoderModel& adversary_encoder,
                          const dsp::Corpus& corpus_train, const dsp::Corpus& corpus_test,
                          const cfg::RunConfig::Eval& cfg, std::uint32_t seed) {
    std::set<std::string> seen_ids;
    for (const dsp::CorpusItem& item : corpus_train.items) seen_ids.insert(item.speaker_id);
    for (const dsp::CorpusItem& item : corpus_test.items)
        if (seen_ids.count(item.speaker_id))
            throw std::runtime_error("eval: speaker '" + item.speaker_id +
                                     "' appears in both train and test corpora");

    const std::vector<Utt> seen = load_utts(corpus_train);
    const std::vector<Utt> unseen = load_utts(corpus_test);
    if (seen.empty() || unseen.empty()) throw std::runtime_error("eval: empty corpus");

    std::vector<std::string> unseen_speakers;
    for (const Utt& u : unseen)
        if (unseen_speakers.empty() || unseen_speakers.back() != u.speaker_id)
            if (std::find(unseen_speakers.begin(), unseen_speakers.end(), u.speaker_id) ==
                unseen_speakers.end())
                unseen_speakers.push_back(u.speaker_id);
    std::sort(unseen_speakers.begin(), unseen_speakers.end());

    const auto enroll_seen = enroll_speakers(adversary_encoder, seen, cfg.enroll_crops,
                                             seed ^ 0x454e5231u);
    const auto enroll_unseen = enroll_speakers(adversary_encoder, unseen, cfg.enroll_crops,
                                               seed ^ 0x454e5232u);
    // conversion targets for the U scenarios
    const auto targets_unseen = enroll_speakers(pipeline_encoder, unseen, cfg.enroll_crops,
                                                seed ^ 0x54475455u);

    auto baseline = [&](const std::vector<Utt>& pool,
                        const std::map<std::string, spkemb::SpeakerEmbedding>& enrollments,
                        const char* tag) {
        ScoreSet set;
        for (const Utt& u : pool)
            add_trials(set, std::string("baseline-") + tag, u,
                       spkemb::embed_utterance(adversary_encoder, u.mel), enrollments);
        return compute_eer(set);
    };
    const EerResult base_seen = baseline(seen, enroll_seen, "seen");
    const EerResult base_unseen = baseline(unseen, enroll_unseen, "unseen");

    auto run_one = [&](Scenario sc, const std::vector<Utt>& pool,
                       const std::map<std::string, spkemb::SpeakerEmbedding>& enrollments,
                       const std::vector<spkemb::SpeakerEmbedding>& targets,
                       double baseline_eer) {
        ScenarioResult res;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            vc::ConvertResult conv =
                vc::convert(vc_model, pool[i].wav, targets[i], cfg.griffin_lim_iterations);
            const spkemb::SpeakerEmbedding probe =
                spkemb::embed_utterance(adversary_encoder, dsp::mel_spectrogram(conv.wav));
            add_trials(res.scores, scenario_name(sc), pool[i], probe, enrollments);
        }
        const EerResult r = compute_eer(res.scores);
        res.report.scenario = sc;
        res.report.eer = r.eer;
        res.report.threshold = r.threshold;
        res.report.n_trials = static_cast<int>(res.scores.trials.size());
        res.report.baseline_eer = baseline_eer;
        return res;
    };

    // utterance-level target assignment: each utterance draws its own target
    auto unseen_targets_for = [&](const std::vector<Utt>& pool, std::uint32_t tag) {
        std::mt19937 rng(seed ^ tag);
        std::vector<spkemb::SpeakerEmbedding> targets;
        targets.reserve(pool.size());
        for (const Utt& u : pool) {
            std::vector<const std::string*> candidates;
            for (const std::string& id : unseen_speakers)
                if (id != u.speaker_id) candidates.push_back(&id);
            targets.push_back(targets_unseen.at(*candidates[rng() % candidates.size()]));
        }
        return targets;
    };
    auto pseudo_targets_for = [&](std::size_t n, std::uint32_t tag) {
        std::vector<psg::PseudoSpeaker> ps = psg::sample_pseudo(
            psg_model, static_cast<int>(n), seed ^ tag, psg::AssignLevel::utterance);
        std::vector<spkemb::SpeakerEmbedding> targets;
        for (const psg::PseudoSpeaker& p : ps) targets.push_back(p.emb);
        return targets;
    };

    ScenarioRun run;
    run.scenarios.push_back(run_one(Scenario::sxu, seen, enroll_seen,
                                    unseen_targets_for(seen, 0x53585531u), base_seen.eer));
    run.scenarios.push_back(run_one(Scenario::uxu, unseen, enroll_unseen,
                                    unseen_targets_for(unseen, 0x55585531u), base_unseen.eer));
    run.scenarios.push_back(run_one(Scenario::sxp, seen, enroll_seen,
                                    pseudo_targets_for(seen.size(), 0x53585031u),
                                    base_seen.eer));
    run.scenarios.push_back(run_one(Scenario::uxp, unseen, enroll_unseen,
                                    pseudo_targets_for(unseen.size(), 0x55585031u),
                                    base_unseen.eer));
    return run;
}

void write_scores_csv(const std::filesystem::path& path, const ScoreSet& scores) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("eval: cannot write " + path.string());
    out << "trial_id,label,score\n";
    for (const Trial& t : scores.trials)
        out << t.trial_id << "," << label_name(t.label) << "," << format_double(t.score) << "\n";
}

ScoreSet read_scores_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("eval: cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "trial_id,label,score")
        throw std::runtime_error("eval: bad scores header in " + path.string());
    ScoreSet set;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        Trial t;
        std::string label, score;
        if (!std::getline(ss, t.trial_id, ',') || !std::getline(ss, label, ',') ||
            !std::getline(ss, score))
            throw std::runtime_error("eval: malformed scores row '" + line + "'");
        t.label = label_from_name(label);
        t.score = std::stod(score);
        set.trials.push_back(std::move(t));
    }
    return set;
}

void write_scenario_csv(const std::filesystem::path& path,
                        const std::vector<ScenarioReport>& reports) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("eval: cannot write " + path.string());
    out << "scenario,eer,threshold,n_trials,baseline_eer\n";
    for (const ScenarioReport& r : reports)
        out << scenario_name(r.scenario) << "," << format_double(r.eer) << ","
            << format_double(r.threshold) << "," << r.n_trials << ","
            << format_double(r.baseline_eer) << "\n";
}

}  // namespace deidvc::eval
