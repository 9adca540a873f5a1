// Command-line surface: data synthesis, the three training stages, feature
// extraction, segmentation, vote merging, and evaluation. Data to files,
// errors as a single line to standard error, non-zero exit on failure.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mseg/config.hpp"
#include "mseg/metrics.hpp"
#include "mseg/mvol.hpp"
#include "mseg/network.hpp"
#include "mseg/trainer.hpp"
#include "mseg/volume.hpp"
#include "mseg/vote.hpp"

namespace fs = std::filesystem;
using namespace mseg;

namespace {

Orientation parse_orientation(const std::string& s) {
    if (s == "axial") return Orientation::Axial;
    if (s == "coronal") return Orientation::Coronal;
    if (s == "sagittal") return Orientation::Sagittal;
    throw std::invalid_argument("orientation must be axial, coronal or sagittal");
}

// Accepts a path with or without the .json suffix.
std::string resolve_config(const std::string& path) {
    if (fs::exists(path)) return path;
    if (fs::exists(path + ".json")) return path + ".json";
    throw std::runtime_error("config not found: " + path);
}

// A dataset directory holds <id>.mvol (image) plus <id>_labels.mvol pairs.
std::vector<VolumeSet> load_dataset(const std::string& dir, bool require_labels,
                                    double normalization_constant) {
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.size() > 5 && name.ends_with(".mvol") && !name.ends_with("_labels.mvol"))
            ids.push_back(name.substr(0, name.size() - 5));
    }
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw std::runtime_error("no .mvol volumes in " + dir);
    std::vector<VolumeSet> out;
    for (const std::string& id : ids) {
        VolumeSet v;
        v.patient_id = id;
        v.image = read_mvol_f32(dir + "/" + id + ".mvol");
        const std::string lab_path = dir + "/" + id + "_labels.mvol";
        if (fs::exists(lab_path)) v.labels = read_mvol_u8(lab_path);
        else if (require_labels) throw std::runtime_error("missing labels for " + id);
        v.modality_present.assign(v.image.shape[0], true);
        normalize_intensity(v, normalization_constant);
        out.push_back(std::move(v));
    }
    return out;
}

std::vector<const VolumeSet*> pointers(const std::vector<VolumeSet>& vols) {
    std::vector<const VolumeSet*> p;
    for (const auto& v : vols) p.push_back(&v);
    return p;
}

void prepare_run_dir(const std::string& run_dir, const std::string& config_path) {
    fs::create_directories(run_dir + "/params");
    fs::create_directories(run_dir + "/features");
    fs::create_directories(run_dir + "/segmentations");
    fs::copy_file(config_path, run_dir + "/config.copy", fs::copy_options::overwrite_existing);
}

Network<float> load_network(const std::string& model_path, const std::string& params_path,
                            std::uint32_t seed) {
    Network<float> net(load_model_config(resolve_config(model_path)), seed);
    net.params().load(params_path);
    return net;
}

int cmd_synth(std::uint32_t seed, std::size_t patients, std::size_t size,
              const std::string& out) {
    fs::create_directories(out);
    auto vols = generate_synthetic(seed, size, patients);
    for (const auto& v : vols) {
        write_mvol(v.image, out + "/" + v.patient_id + ".mvol");
        write_mvol(*v.labels, out + "/" + v.patient_id + "_labels.mvol");
    }
    std::cout << "wrote " << vols.size() << " volumes to " << out << "\n";
    return 0;
}

int cmd_train2d(const std::string& config, const std::string& model, const std::string& data,
                const std::string& orientation, const std::string& run_dir,
                const std::string& pretrained, long seed_override) {
    RunConfig cfg = load_run_config(resolve_config(config));
    if (seed_override >= 0) cfg.seed = static_cast<std::uint32_t>(seed_override);
    ModelConfig mc = load_model_config(resolve_config(model));
    auto vols = load_dataset(data, true, cfg.normalization_constant);
    prepare_run_dir(run_dir, resolve_config(config));
    ParamStore<float> pre;
    const ParamStore<float>* pre_ptr = nullptr;
    Network<float> probe(mc, 0);  // structure defines the parameter shapes
    if (!pretrained.empty()) {
        probe.params().load(pretrained);
        pre_ptr = &probe.params();
    }
    auto outcome = train_2d(mc, pointers(vols), parse_orientation(orientation), cfg, cfg.seed,
                            {}, pre_ptr);
    outcome.net.params().save(run_dir + "/params/2d_" + orientation + ".bin");
    write_training_log(outcome.log, run_dir + "/log.tsv");
    std::cout << "final loss " << outcome.log.back().loss << "\n";
    return 0;
}

int cmd_pretrain(const std::string& config, const std::string& model, const std::string& data,
                 const std::string& orientation, std::size_t modality,
                 const std::string& run_dir, long seed_override) {
    RunConfig cfg = load_run_config(resolve_config(config));
    if (seed_override >= 0) cfg.seed = static_cast<std::uint32_t>(seed_override);
    ModelConfig mc = load_model_config(resolve_config(model));
    auto vols = load_dataset(data, true, cfg.normalization_constant);
    prepare_run_dir(run_dir, resolve_config(config));
    auto outcome =
        pretrain_subnetwork(mc, modality, pointers(vols), parse_orientation(orientation), cfg,
                            cfg.seed);
    outcome.net.params().save(run_dir + "/params/sub" + std::to_string(modality) + ".bin");
    write_training_log(outcome.log, run_dir + "/log.tsv");
    std::cout << "final loss " << outcome.log.back().loss << "\n";
    return 0;
}

int cmd_extract(const std::string& config, const std::string& model, const std::string& data,
                const std::string& pax, const std::string& pcor, const std::string& psag,
                const std::string& run_dir) {
    RunConfig cfg = load_run_config(resolve_config(config));
    auto vols = load_dataset(data, false, cfg.normalization_constant);
    prepare_run_dir(run_dir, resolve_config(config));
    Network<float> ax = load_network(model, pax, 0);
    Network<float> cor = load_network(model, pcor, 0);
    Network<float> sag = load_network(model, psag, 0);
    extract_training_features(pointers(vols), ax, cor, sag, run_dir + "/features");
    std::cout << "extracted features for " << vols.size() << " volumes\n";
    return 0;
}

int cmd_train3d(const std::string& config, const std::string& model, const std::string& data,
                const std::string& features_dir, const std::string& run_dir,
                long seed_override) {
    RunConfig cfg = load_run_config(resolve_config(config));
    if (seed_override >= 0) cfg.seed = static_cast<std::uint32_t>(seed_override);
    ModelConfig mc = load_model_config(resolve_config(model));
    auto vols = load_dataset(data, true, cfg.normalization_constant);
    prepare_run_dir(run_dir, resolve_config(config));
    std::vector<FeatureVolume> feats;
    std::vector<const FeatureVolume*> feat_ptrs;
    if (!features_dir.empty()) {
        for (const auto& v : vols) {
            FeatureVolume f;
            f.features = read_mvol_f32(features_dir + "/" + v.patient_id + ".mvol");
            feats.push_back(std::move(f));
        }
        for (const auto& f : feats) feat_ptrs.push_back(&f);
    } else if (needs_features(mc.variant)) {
        throw std::runtime_error("variant " + variant_to_string(mc.variant) +
                                 " requires --features");
    }
    auto outcome = train_3d(mc, pointers(vols), features_dir.empty() ? nullptr : &feat_ptrs,
                            cfg, cfg.seed);
    outcome.net.params().save(run_dir + "/params/3d_" + variant_to_string(mc.variant) + ".bin");
    write_training_log(outcome.log, run_dir + "/log.tsv");
    std::cout << "final loss " << outcome.log.back().loss << "\n";
    return 0;
}

int cmd_segment(const std::string& config, const std::string& model, const std::string& params,
                const std::string& data, const std::string& features_dir,
                const std::string& orientation, const std::string& run_dir) {
    RunConfig cfg = load_run_config(resolve_config(config));
    ModelConfig mc = load_model_config(resolve_config(model));
    auto vols = load_dataset(data, false, cfg.normalization_constant);
    prepare_run_dir(run_dir, resolve_config(config));
    Network<float> net = load_network(model, params, 0);
    for (const auto& v : vols) {
        LabelVolume seg;
        if (is_2d_variant(mc.variant)) {
            seg = segment_2d(net, v, parse_orientation(orientation));
        } else {
            FeatureVolume f;
            const FeatureVolume* fp = nullptr;
            if (!features_dir.empty()) {
                f.features = read_mvol_f32(features_dir + "/" + v.patient_id + ".mvol");
                fp = &f;
            } else if (needs_features(mc.variant)) {
                throw std::runtime_error("variant " + variant_to_string(mc.variant) +
                                         " requires --features");
            }
            seg = segment_3d(net, v, fp, cfg.patch);
        }
        write_mvol(seg, run_dir + "/segmentations/" + v.patient_id + ".mvol");
    }
    std::cout << "segmented " << vols.size() << " volumes\n";
    return 0;
}

int cmd_merge(const std::vector<std::string>& inputs, const std::string& out, double t_tumor,
              double t_core, double t_enh, const std::string& comparison) {
    Thresholds t{t_tumor, t_core, t_enh,
                 comparison == "gt" ? VoteComparison::Greater : VoteComparison::GreaterEqual};
    t.validate();
    std::vector<LabelVolume> segs;
    for (const std::string& p : inputs) segs.push_back(read_mvol_u8(p));
    write_mvol(merge_segmentations(segs, t), out);
    std::cout << "merged " << segs.size() << " segmentations into " << out << "\n";
    return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& truth_dir) {
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(pred_dir)) {
        const std::string name = e.path().filename().string();
        if (name.ends_with(".mvol")) ids.push_back(name.substr(0, name.size() - 5));
    }
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw std::runtime_error("no predictions in " + pred_dir);
    std::vector<double> wt, tc, ec;
    std::cout << "patient\tWT\tTC\tEC\n";
    for (const std::string& id : ids) {
        LabelVolume pred = read_mvol_u8(pred_dir + "/" + id + ".mvol");
        LabelVolume truth = read_mvol_u8(truth_dir + "/" + id + "_labels.mvol");
        RegionScores s = evaluate(pred, truth);
        wt.push_back(s.wt);
        tc.push_back(s.tc);
        ec.push_back(s.ec);
        std::cout << id << '\t' << s.wt << '\t' << s.tc << '\t' << s.ec << "\n";
    }
    auto line = [](const char* label, const SummaryStats& s) {
        std::cout << label << "\tmean " << s.mean << "\tmedian " << s.median << "\tstddev "
                  << s.stddev << "\n";
    };
    line("WT", summarize(wt));
    line("TC", summarize(tc));
    line("EC", summarize(ec));
    return 0;
}

int cmd_receptive_field(const std::string& config) {
    std::ifstream f(resolve_config(config));
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string text = ss.str();
    ArchitectureSpec spec;
    if (text.find("\"variant\"") != std::string::npos) {
        ModelConfig mc = parse_model_config(text);
        spec = mc.variant == ModelVariant::TwoThreeD_C ? mc.head : mc.trunk;
    } else {
        spec = parse_architecture(text);
    }
    auto rf = receptive_field(spec);
    for (std::size_t i = 0; i < rf.size(); ++i) std::cout << (i ? " " : "") << rf[i];
    std::cout << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cascaded 2D-3D multiclass segmentation toolkit"};
    app.require_subcommand(1);

    std::string config = "configs/default_run.json";
    std::string model, data, run_dir = "run/default", orientation = "axial";
    std::string params, features_dir, pretrained, out;
    std::string pax, pcor, psag, comparison = "ge";
    std::vector<std::string> inputs;
    std::uint32_t seed = 7;
    long seed_override = -1;
    std::size_t patients = 10, size = 48, modality = 0;
    double t_tumor = 0.4, t_core = 0.3, t_enh = 0.4;

    auto* synth = app.add_subcommand("synth", "Generate synthetic volumes");
    synth->add_option("--seed", seed);
    synth->add_option("--patients", patients);
    synth->add_option("--size", size);
    synth->add_option("--out", out)->required();

    auto add_common = [&](CLI::App* c, bool with_data = true) {
        c->add_option("--config", config);
        c->add_option("--run", run_dir);
        if (with_data) c->add_option("--data", data)->required();
    };

    auto* train2d = app.add_subcommand("train2d", "Train one 2D orientation network");
    add_common(train2d);
    train2d->add_option("--model", model)->required();
    train2d->add_option("--orientation", orientation);
    train2d->add_option("--pretrained", pretrained);
    train2d->add_option("--seed", seed_override);

    auto* pretrain = app.add_subcommand("pretrain", "Pretrain one modality subnetwork");
    add_common(pretrain);
    pretrain->add_option("--model", model)->required();
    pretrain->add_option("--orientation", orientation);
    pretrain->add_option("--modality", modality)->required();
    pretrain->add_option("--seed", seed_override);

    auto* extract = app.add_subcommand("extract-features", "Extract 2D feature volumes");
    add_common(extract);
    extract->add_option("--model", model)->required();
    extract->add_option("--params-axial", pax)->required();
    extract->add_option("--params-coronal", pcor)->required();
    extract->add_option("--params-sagittal", psag)->required();

    auto* train3d = app.add_subcommand("train3d", "Train a 3D network on patches");
    add_common(train3d);
    train3d->add_option("--model", model)->required();
    train3d->add_option("--features", features_dir);
    train3d->add_option("--seed", seed_override);

    auto* segment = app.add_subcommand("segment", "Segment a dataset");
    add_common(segment);
    segment->add_option("--model", model)->required();
    segment->add_option("--params", params)->required();
    segment->add_option("--features", features_dir);
    segment->add_option("--orientation", orientation);

    auto* merge = app.add_subcommand("merge", "Merge member segmentations by vote");
    merge->add_option("inputs", inputs)->required();
    merge->add_option("--out", out)->required();
    merge->add_option("--t-tumor", t_tumor);
    merge->add_option("--t-core", t_core);
    merge->add_option("--t-enh", t_enh);
    merge->add_option("--comparison", comparison);

    auto* eval = app.add_subcommand("eval", "Dice of predictions against ground truth");
    eval->add_option("--pred", data)->required();
    eval->add_option("--truth", out)->required();

    auto* rf = app.add_subcommand("receptive-field", "Per-axis receptive field of a config");
    rf->add_option("--config", config)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(seed, patients, size, out);
        if (train2d->parsed())
            return cmd_train2d(config, model, data, orientation, run_dir, pretrained,
                               seed_override);
        if (pretrain->parsed())
            return cmd_pretrain(config, model, data, orientation, modality, run_dir,
                                seed_override);
        if (extract->parsed()) return cmd_extract(config, model, data, pax, pcor, psag, run_dir);
        if (train3d->parsed())
            return cmd_train3d(config, model, data, features_dir, run_dir, seed_override);
        if (segment->parsed())
            return cmd_segment(config, model, params, data, features_dir, orientation, run_dir);
        if (merge->parsed())
            return cmd_merge(inputs, out, t_tumor, t_core, t_enh, comparison);
        if (eval->parsed()) return cmd_eval(data, out);
        if (rf->parsed()) return cmd_receptive_field(config);
    } catch (const std::exception& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        std::cerr << "error: " << msg << "\n";
        return 1;
    }
    return 0;
}
