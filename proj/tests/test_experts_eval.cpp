#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "glad/evalharness.hpp"
#include "glad/experts.hpp"

using namespace glad;

namespace {

NetSpec small_net() {
    NetSpec s;
    s.depth = 1;
    s.width = 8;
    s.image_size = 16;
    s.classes = 2;
    return s;
}

std::vector<uint8_t> file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double dataset_loss(const Dataset& data, const NetSpec& spec, const ParamVector& params) {
    NoGradGuard no_grad;
    std::vector<int64_t> idx;
    for (int64_t i = 0; i < data.train_count; ++i) idx.push_back(i);
    std::vector<int32_t> labels(data.labels.begin(), data.labels.begin() + data.train_count);
    return cross_entropy_loss(forward_logits(spec, params, index_select(data.images, idx)), labels).item();
}

}  // namespace

TEST_CASE("train_expert: zero learning rate freezes every snapshot") {
    auto data = gen_glyph_dataset(2, 10, 16, 1);
    auto spec = small_net();
    ExpertHyper hyper;
    hyper.epochs = 3;
    hyper.lr = 0.0;
    hyper.batch = 8;
    auto traj = train_expert(data, spec, hyper, 5);
    CHECK(traj.size() == 4);
    for (const auto& snap : traj) CHECK(bitwise_equal(snap.flat, traj[0].flat));
}

TEST_CASE("train_expert: the 15-epoch recipe yields 16 snapshots and learns") {
    auto data = gen_glyph_dataset(2, 10, 16, 2);
    auto spec = small_net();
    ExpertHyper hyper;  // defaults: 15 epochs, lr 1e-2, batch 256
    CHECK(hyper.epochs == 15);
    CHECK(hyper.lr == 0.01);
    CHECK(hyper.batch == 256);
    hyper.batch = 8;
    auto traj = train_expert(data, spec, hyper, 7);
    CHECK(traj.size() == 16);
    const double first = dataset_loss(data, spec, traj.front());
    const double last = dataset_loss(data, spec, traj.back());
    CHECK(last < first);

    // deterministic given the seed
    auto again = train_expert(data, spec, hyper, 7);
    CHECK(bitwise_equal(traj.back().flat, again.back().flat));
}

TEST_CASE("GLADTRAJ: round trip, byte equality, size arithmetic") {
    auto data = gen_glyph_dataset(2, 10, 16, 3);
    auto spec = small_net();
    ExpertHyper hyper;
    hyper.epochs = 2;
    hyper.batch = 8;
    auto buffer = build_expert_buffer(data, spec, hyper, 2, 11);

    const auto p1 = std::filesystem::temp_directory_path() / "glad_traj_a.bin";
    const auto p2 = std::filesystem::temp_directory_path() / "glad_traj_b.bin";
    save_buffer(buffer, p1);
    auto loaded = load_buffer(p1);
    CHECK(loaded.trajectories.size() == 2);
    CHECK(loaded.epochs == buffer.epochs);
    for (size_t t = 0; t < 2; ++t) {
        for (size_t s = 0; s < loaded.trajectories[t].size(); ++s) {
            CHECK(bitwise_equal(loaded.trajectories[t][s].flat, buffer.trajectories[t][s].flat));
        }
    }
    save_buffer(loaded, p2);
    auto bytes = file_bytes(p1);
    CHECK(bytes == file_bytes(p2));

    // payload is exactly n_traj * n_snap * layout_len doubles after the header
    const size_t payload = 2ull * 3ull * static_cast<size_t>(net_layout(spec)->total) * 8ull;
    const size_t header = 8 + 4                                       // magic + version
                          + (4 + 7) + 8 + 8 + (4 + 8) + 8 + 8 + 8 + 8 // net spec: family "convnet", depth,
                                                                      // width, norm "instance", size,
                                                                      // channels, classes, groups
                          + 8 + 8                                     // epochs + interval
                          + 4 + 4 + 8                                 // counts + layout length
                          + 8;                                        // payload count prefix
    CHECK(bytes.size() == header + payload);

    {  // corrupted magic is rejected outright
        auto corrupt = bytes;
        corrupt[0] = 'Z';
        std::ofstream out(p1, std::ios::binary);
        out.write(reinterpret_cast<const char*>(corrupt.data()), static_cast<std::streamsize>(corrupt.size()));
    }
    CHECK_THROWS_WITH_AS(load_buffer(p1), doctest::Contains("magic"), Error);

    {  // truncation is rejected
        std::ofstream out(p1, std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size() - 16));
    }
    CHECK_THROWS_AS(load_buffer(p1), Error);
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}

TEST_CASE("GLADTRAJ: property round trip over random small buffers") {
    Rng rng(23);
    for (int trial = 0; trial < 4; ++trial) {
        NetSpec spec;
        spec.depth = 1 + static_cast<int64_t>(rng.randint(2));
        spec.width = 4 + static_cast<int64_t>(rng.randint(3)) * 4;
        spec.image_size = spec.depth == 1 ? 16 : 16;
        spec.classes = 2 + static_cast<int64_t>(rng.randint(3));
        auto layout = net_layout(spec);
        TrajBuffer buffer;
        buffer.spec = spec;
        buffer.epochs = 1 + static_cast<int64_t>(rng.randint(3));
        buffer.interval = 1;
        const int64_t n_traj = 1 + static_cast<int64_t>(rng.randint(2));
        for (int64_t t = 0; t < n_traj; ++t) {
            buffer.trajectories.emplace_back();
            for (int64_t s = 0; s <= buffer.epochs; ++s) {
                std::vector<double> vals(static_cast<size_t>(layout->total));
                for (auto& v : vals) v = rng.normal();
                buffer.trajectories.back().push_back({Tensor::from({layout->total}, std::move(vals)), layout});
            }
        }
        const auto p = std::filesystem::temp_directory_path() / "glad_traj_prop.bin";
        save_buffer(buffer, p);
        auto loaded = load_buffer(p);
        for (size_t t = 0; t < buffer.trajectories.size(); ++t) {
            for (size_t s = 0; s < buffer.trajectories[t].size(); ++s) {
                CHECK(bitwise_equal(loaded.trajectories[t][s].flat, buffer.trajectories[t][s].flat));
            }
        }
        std::filesystem::remove(p);
    }
}

TEST_CASE("lr_schedule: exact junction, exact midpoint, monotone decay") {
    EvalProtocol p = EvalProtocol::desk();
    const double base = 0.02;
    // warmup ramp
    CHECK(lr_schedule(0, p, base) == doctest::Approx(base / 50.0));
    // junction hits base exactly (cos(0) branch)
    CHECK(lr_schedule(p.warmup_epochs, p, base) == base);
    // continuity: last warmup epoch also reaches base exactly
    CHECK(lr_schedule(p.warmup_epochs - 1, p, base) == base);
    // cosine midpoint is exactly base/2
    CHECK(lr_schedule(p.warmup_epochs + p.decay_epochs / 2, p, base) == base / 2.0);
    // tail approaches zero and never increases
    double prev = base;
    for (int64_t e = p.warmup_epochs; e < p.warmup_epochs + p.decay_epochs; ++e) {
        const double lr = lr_schedule(e, p, base);
        CHECK(lr <= prev + 1e-15);
        prev = lr;
    }
    CHECK(prev < 0.002 * base + 1e-9);
    CHECK_THROWS_AS(lr_schedule(-1, p, base), Error);
    CHECK_THROWS_AS(lr_schedule(p.warmup_epochs + p.decay_epochs, p, base), Error);
}

TEST_CASE("ema_update: no-memory, fixed point, geometric convergence") {
    auto layout = std::make_shared<ParamLayout>();
    layout->add("w", Shape{4});
    ParamVector ema{Tensor::from({4}, {1, 2, 3, 4}), layout};
    ParamVector cur{Tensor::from({4}, {5, 5, 5, 5}), layout};

    auto instant = ema_update(ema, cur, 0.0);
    CHECK(bitwise_equal(instant.flat, cur.flat));

    auto fixed = ema_update(cur, cur, 0.7);
    CHECK(max_abs_diff(fixed.flat, cur.flat) < 1e-15);

    // gap shrinks by exactly the decay factor per step
    const double decay = 0.9;
    auto state = ema;
    double prev_gap = max_abs_diff(state.flat, cur.flat);
    for (int k = 0; k < 20; ++k) {
        state = ema_update(state, cur, decay);
        const double gap = max_abs_diff(state.flat, cur.flat);
        CHECK(gap / prev_gap == doctest::Approx(decay).epsilon(1e-12));
        prev_gap = gap;
    }

    auto other_layout = std::make_shared<ParamLayout>();
    other_layout->add("w", Shape{4});
    ParamVector alien{Tensor::zeros({4}), other_layout};
    CHECK_THROWS_AS(ema_update(ema, alien, 0.9), Error);
}

TEST_CASE("train_student: deterministic, and constant images stay near chance") {
    auto data = gen_glyph_dataset(2, 10, 16, 9);
    auto spec = small_net();
    EvalProtocol p = EvalProtocol::desk();
    p.warmup_epochs = 3;
    p.decay_epochs = 3;
    p.ema_decay = 0.5;
    p.batch = 4;

    std::vector<int64_t> val_idx;
    for (int64_t i = data.train_count; i < data.count(); ++i) val_idx.push_back(i);
    auto val_images = index_select(data.images, val_idx);
    std::vector<int32_t> val_labels(data.labels.begin() + data.train_count, data.labels.end());

    auto syn_images = index_select(data.images, {0, 16});  // one real image per class
    std::vector<int32_t> syn_labels{0, 1};
    auto a = train_student(syn_images, syn_labels, spec, p, 4, val_images, val_labels);
    auto b = train_student(syn_images, syn_labels, spec, p, 4, val_images, val_labels);
    CHECK(a.ema_accuracy == b.ema_accuracy);

    // all classes share one constant image: nothing to learn
    auto constant = Tensor::full({2, 3, 16, 16}, 0.2);
    double acc_sum = 0.0;
    for (uint64_t seed = 0; seed < 3; ++seed) {
        acc_sum += train_student(constant, syn_labels, spec, p, seed, val_images, val_labels).ema_accuracy;
    }
    CHECK(acc_sum / 3.0 == doctest::Approx(0.5).epsilon(0.4));
}

TEST_CASE("cross_arch_eval: degenerate aggregation and report arithmetic") {
    auto data = gen_glyph_dataset(2, 10, 16, 13);
    EvalProtocol p = EvalProtocol::desk();
    CHECK(EvalProtocol{}.repeats == 5);  // default repeats
    p.warmup_epochs = 2;
    p.decay_epochs = 2;
    p.repeats = 1;
    p.batch = 4;

    std::vector<int64_t> val_idx;
    for (int64_t i = data.train_count; i < data.count(); ++i) val_idx.push_back(i);
    auto val_images = index_select(data.images, val_idx);
    std::vector<int32_t> val_labels(data.labels.begin() + data.train_count, data.labels.end());
    auto syn_images = index_select(data.images, {0, 16});
    std::vector<int32_t> syn_labels{0, 1};

    auto report = cross_arch_eval(syn_images, syn_labels, {small_net()}, p, val_images, val_labels, 3);
    CHECK(report.cells.size() == 1);
    auto [m, s] = report.arch_mean_std("convnet");
    CHECK(m == report.cells[0].accuracy);
    CHECK(s == 0.0);
    CHECK(report.cross_arch_mean() == m);

    NetSpec mlp;
    mlp.family = NetFamily::mlp;
    mlp.width = 16;
    mlp.image_size = 16;
    mlp.classes = 2;
    auto two = cross_arch_eval(syn_images, syn_labels, {small_net(), mlp}, p, val_images, val_labels, 3);
    const double mean_conv = two.arch_mean_std("convnet").first;
    const double mean_mlp = two.arch_mean_std("mlp").first;
    CHECK(two.cross_arch_mean() == doctest::Approx((mean_conv + mean_mlp) / 2.0).epsilon(1e-12));

    // serialized forms carry every cell
    auto tsv = two.to_tsv();
    CHECK(tsv.find("convnet") != std::string::npos);
    CHECK(tsv.find("mlp") != std::string::npos);
    auto md = two.to_markdown("demo");
    CHECK(md.find("| demo |") != std::string::npos);
}
