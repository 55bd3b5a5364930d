#include "glad/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "glad/core/error.hpp"

namespace glad {

const std::vector<RunConfig::KeyInfo>& RunConfig::registry() {
    static const std::vector<KeyInfo> keys = {
        {"preset", "desk", "", "defaults profile: desk (laptop scale) or paper (reference scale)"},
        {"run.name", "run", "", "run directory name under out.dir"},
        {"out.dir", "out", "", "root output directory"},
        {"dtype", "f64", "", "numeric precision for distill/eval: f64 or f32"},

        {"data.path", "", "", "GLADDATA file to load; empty = <run dir>/dataset.bin"},
        {"data.classes", "10", "", "glyph classes (2..10)"},
        {"data.per_class", "120", "500", "images per class before the 80/20 split"},
        {"data.size", "32", "", "image side length: 16, 32 or 64"},
        {"data.seed", "0", "", "dataset generation seed"},

        {"backbone.depth", "3", "", "ConvNet blocks"},
        {"backbone.width", "64", "128", "ConvNet channels per block"},
        {"backbone.norm", "instance", "", "normalization: instance, none or group"},

        {"gen.path", "", "", "GLADGENW file to load; empty = fresh random weights"},
        {"gen.z_dim", "64", "", "latent dimension"},
        {"gen.w_dim", "64", "", "style dimension"},
        {"gen.blocks", "4", "", "synthesis blocks"},
        {"gen.base_size", "2", "", "initial feature resolution"},
        {"gen.base_channels", "128", "", "channels at the first block"},
        {"gen.seed", "0", "", "generator weight seed"},
        {"gen.pretrain.steps", "300", "", "reconstruction pretraining steps (pretrain-gen)"},
        {"gen.pretrain.lr", "0.01", "", "pretraining learning rate"},
        {"gen.pretrain.batch", "16", "", "pretraining batch size"},
        {"gen.pretrain.sample", "128", "", "training images used for reconstruction"},

        {"experts.path", "", "", "GLADTRAJ file; empty = <run dir>/experts.bin"},
        {"experts.count", "3", "", "trajectories to train"},
        {"experts.epochs", "6", "15", "epochs per trajectory"},
        {"experts.lr", "0.01", "", "expert SGD learning rate"},
        {"experts.batch", "64", "256", "expert SGD batch size"},
        {"experts.seed", "0", "", "expert training seed"},

        {"distill.method", "dc", "", "distillation objective: dc, dm or mtt"},
        {"distill.space", "f2", "", "distillation space: pixel, wplus or f<n>"},
        {"distill.ipc", "1", "", "images per class"},
        {"distill.iterations", "120", "5000", "distillation iterations"},
        {"distill.latent_lr", "", "", "latent/pixel learning rate; empty = per-method default"},
        {"distill.alpha_lr", "1e-5", "", "learning rate for the synthetic step size"},
        {"distill.momentum", "0.5", "", "latent optimizer momentum"},
        {"distill.real_batch", "32", "256", "real images per class per iteration"},
        {"distill.dc_outer", "1", "", "dc outer loops per iteration"},
        {"distill.dc_net_steps", "1", "", "dc net training steps between matching updates"},
        {"distill.dc_net_lr", "0.01", "", "dc net training learning rate"},
        {"distill.dc_per_layer", "false", "", "dc cosine summed per layer group"},
        {"distill.gen_batch", "16", "", "latents per generator pass"},
        {"distill.pixel_clamp", "true", "", "clamp pixel-space images to [-1,1] after each step"},
        {"distill.pixel_init", "real", "", "pixel-space init: real or noise"},
        {"distill.init", "feedforward", "", "latent init: feedforward or gaussian"},
        {"distill.moment_samples", "1024", "", "samples for gaussian-init moment estimation"},
        {"distill.optimize_alpha", "true", "", "optimize the synthetic step size (mtt)"},
        {"distill.alpha_init", "0.01", "", "initial synthetic step size"},
        {"distill.mtt_n", "5", "10", "synthetic steps per iteration (N)"},
        {"distill.mtt_m", "2", "", "expert epochs to match (M)"},
        {"distill.mtt_tplus", "2", "", "maximum starting epoch (T+)"},
        {"distill.mtt_syn_batch", "0", "", "images per inner step; 0 = whole set"},
        {"distill.mtt_backward", "constmem", "", "mtt backward pass: constmem or unrolled"},
        {"distill.aug", "true", "", "apply siamese augmentation"},
        {"distill.aug_strategy", "compose_all", "", "compose_all or single_random"},
        {"distill.strict", "false", "", "error on non-finite losses"},
        {"distill.seed", "0", "", "distillation seed"},

        {"eval.warmup", "50", "500", "linear warm-up epochs"},
        {"eval.decay", "50", "500", "cosine decay epochs"},
        {"eval.repeats", "5", "", "students per architecture"},
        {"eval.momentum", "0.9", "", "student SGD momentum"},
        {"eval.weight_decay", "5e-4", "", "student l2 weight decay"},
        {"eval.ema", "0.95", "0.999", "EMA decay for reported weights"},
        {"eval.batch", "64", "256", "student batch size"},
        {"eval.lr.convnet", "0.01", "", "starting learning rate for convnet students"},
        {"eval.lr.mlp", "0.01", "", "starting learning rate for mlp students"},
        {"eval.lr.altconvnet", "0.01", "", "starting learning rate for altconvnet students"},
        {"eval.include_backbone", "true", "", "also evaluate on the distillation backbone"},
        {"eval.seed", "0", "", "evaluation seed"},

        {"synset.path", "", "", "GLADSYNS file; empty = <run dir>/synset.bin"},
        {"export.columns", "10", "", "grid columns for image export"},
        {"report.runs", "", "", "comma-separated run directories; empty = every run under out.dir"},
        {"sweep.spaces", "", "", "comma-separated spaces; empty = pixel,wplus,f0..fB"},
    };
    return keys;
}

RunConfig::RunConfig() {
    for (const auto& k : registry()) values_[k.key] = k.desk_default;
}

void RunConfig::apply_preset(const std::string& preset) {
    if (preset == "desk") return;  // desk defaults are the baseline
    require(preset == "paper", "config: unknown preset '", preset, "' (desk or paper)");
    for (const auto& k : registry()) {
        if (!k.paper_default.empty()) values_[k.key] = k.paper_default;
    }
    values_["preset"] = "paper";
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    require(it != values_.end(), "config: unknown key '", key, "'");
    it->second = value;
    if (key == "preset") apply_preset(value);
}

void RunConfig::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), "config: cannot open '", path.string(), "'");
    std::string line;
    int64_t line_no = 0;
    std::vector<std::pair<std::string, std::string>> pairs;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto strip = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        const std::string text = strip(line);
        if (text.empty()) continue;
        const auto eq = text.find('=');
        require(eq != std::string::npos, "config: '", path.string(), "' line ", line_no,
                ": expected key = value");
        pairs.emplace_back(strip(text.substr(0, eq)), strip(text.substr(eq + 1)));
    }
    // preset first so explicit keys in the same file win over its defaults
    for (const auto& [k, v] : pairs) {
        if (k == "preset") set(k, v);
    }
    for (const auto& [k, v] : pairs) {
        if (k != "preset") set(k, v);
    }
}

void RunConfig::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    require(eq != std::string::npos, "config: override '", assignment, "' must be key=value");
    set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

const std::string& RunConfig::str(const std::string& key) const {
    auto it = values_.find(key);
    require(it != values_.end(), "config: unknown key '", key, "'");
    return it->second;
}

int64_t RunConfig::i64(const std::string& key) const {
    try {
        size_t pos = 0;
        const int64_t v = std::stoll(str(key), &pos);
        require(pos == str(key).size(), "trailing characters");
        return v;
    } catch (...) {
        fail("config: key '", key, "' = '", str(key), "' is not an integer");
    }
}

uint64_t RunConfig::u64(const std::string& key) const {
    const int64_t v = i64(key);
    require(v >= 0, "config: key '", key, "' must be non-negative");
    return static_cast<uint64_t>(v);
}

double RunConfig::f64(const std::string& key) const {
    try {
        size_t pos = 0;
        const double v = std::stod(str(key), &pos);
        require(pos == str(key).size(), "trailing characters");
        return v;
    } catch (...) {
        fail("config: key '", key, "' = '", str(key), "' is not a number");
    }
}

bool RunConfig::flag(const std::string& key) const {
    const auto& v = str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail("config: key '", key, "' = '", v, "' is not a boolean");
}

bool RunConfig::has_value(const std::string& key) const { return !str(key).empty(); }

std::string RunConfig::echo() const {
    std::ostringstream os;
    for (const auto& k : registry()) {
        os << k.key << " = " << values_.at(k.key) << '\n';
    }
    return os.str();
}

std::filesystem::path RunConfig::run_dir() const {
    return std::filesystem::path(str("out.dir")) / str("run.name");
}

}  // namespace glad
