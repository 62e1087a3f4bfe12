#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mmpt/checkpoint.hpp"
#include "mmpt/errors.hpp"
#include "mmpt/param.hpp"

using namespace mmpt;
namespace fs = std::filesystem;

namespace {

std::string test_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("mmpt_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

RawCheckpoint sample_checkpoint() {
    RawCheckpoint ck;
    ck.grid_rows = 2;
    ck.grid_cols = 3;
    ck.params.push_back({"alpha", {2, 2}, {1.0, -2.0, 0.5, 3.25}, false});
    ck.params.push_back({"beta", {3}, {0.0, 1e-9, -1e9}, true});
    RawOptState opt;
    opt.step_count = 41;
    opt.slots.push_back({"alpha", {0.1, 0.2, 0.3, 0.4}, {1.0, 2.0, 3.0, 4.0}});
    ck.opt = opt;
    return ck;
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("raw checkpoint round-trips exactly") {
    const std::string dir = test_dir("ckpt_roundtrip");
    const std::string path = dir + "/a.ckpt";
    const RawCheckpoint ck = sample_checkpoint();
    write_raw_checkpoint(path, ck);
    const RawCheckpoint back = read_raw_checkpoint(path);

    CHECK(back.grid_rows == 2);
    CHECK(back.grid_cols == 3);
    REQUIRE(back.params.size() == 2);
    CHECK(back.params[0].name == "alpha");
    CHECK(back.params[0].shape == Shape{2, 2});
    CHECK(back.params[0].frozen == false);
    CHECK(back.params[0].data == ck.params[0].data);
    CHECK(back.params[1].frozen == true);
    CHECK(back.params[1].data == ck.params[1].data);
    REQUIRE(back.opt.has_value());
    CHECK(back.opt->step_count == 41);
    REQUIRE(back.opt->slots.size() == 1);
    CHECK(back.opt->slots[0].m == ck.opt->slots[0].m);
    CHECK(back.opt->slots[0].v == ck.opt->slots[0].v);
}

TEST_CASE("writes leave no temp file behind") {
    const std::string dir = test_dir("ckpt_atomic");
    write_raw_checkpoint(dir + "/a.ckpt", sample_checkpoint());
    size_t files = 0;
    for (const auto& e : fs::directory_iterator(dir)) {
        ++files;
        CHECK(e.path().extension() == ".ckpt");
    }
    CHECK(files == 1);
}

TEST_CASE("truncated file is reported") {
    const std::string dir = test_dir("ckpt_trunc");
    const std::string path = dir + "/a.ckpt";
    write_raw_checkpoint(path, sample_checkpoint());
    const auto size = fs::file_size(path);
    fs::resize_file(path, size - 7);
    CHECK_THROWS_WITH_AS(read_raw_checkpoint(path),
                         doctest::Contains("truncated"), DataError);
}

TEST_CASE("non-checkpoint file is rejected") {
    const std::string dir = test_dir("ckpt_magic");
    const std::string path = dir + "/noise.ckpt";
    std::ofstream(path) << "definitely not binary parameters";
    CHECK_THROWS_WITH_AS(read_raw_checkpoint(path),
                         doctest::Contains("not a checkpoint"), DataError);
}

TEST_CASE("store save and load restores values and optimizer moments") {
    const std::string dir = test_dir("ckpt_store");
    const std::string path = dir + "/model.ckpt";
    Rng rng(7);

    ParamStore a;
    a.add("w", init_tensor({4, 3}, Init::kNormal, rng, 1.0));
    a.add("b", init_tensor({3}, Init::kZero));
    a.add("frozen_embed", init_tensor({5}, Init::kOnes), true);

    // Take one optimizer step so there are real moments to persist.
    a.zero_grads();
    for (auto* p : a.trainable())
        for (auto& g : p->value.node()->grad) g = 0.25;
    AdamW opt;
    opt.step(a, 1e-3);
    const std::vector<Real> w_after = a.at("w").value.data();
    save_checkpoint(path, a, 2, 2, &opt);

    ParamStore b;
    b.add("w", init_tensor({4, 3}, Init::kZero));
    b.add("b", init_tensor({3}, Init::kOnes));
    b.add("frozen_embed", init_tensor({5}, Init::kZero), true);
    AdamW opt2;
    load_checkpoint(path, b, &opt2);

    CHECK(b.at("w").value.data() == w_after);
    CHECK(b.at("b").value.data() == a.at("b").value.data());
    CHECK(b.at("frozen_embed").value.data() == a.at("frozen_embed").value.data());
    CHECK(opt2.step_count() == 1);
    REQUIRE(opt2.slots().count("w") == 1);
    CHECK(opt2.slots().at("w").m == opt.slots().at("w").m);
    CHECK(opt2.slots().at("w").v == opt.slots().at("w").v);
}

TEST_CASE("load refuses mismatched stores") {
    const std::string dir = test_dir("ckpt_mismatch");
    const std::string path = dir + "/model.ckpt";
    ParamStore a;
    a.add("w", init_tensor({2, 2}, Init::kOnes));
    save_checkpoint(path, a, 1, 1);

    ParamStore wrong_shape;
    wrong_shape.add("w", init_tensor({2, 3}, Init::kOnes));
    CHECK_THROWS_AS(load_checkpoint(path, wrong_shape), Error);

    ParamStore wrong_name;
    wrong_name.add("w2", init_tensor({2, 2}, Init::kOnes));
    CHECK_THROWS_AS(load_checkpoint(path, wrong_name), Error);

    ParamStore wrong_frozen;
    wrong_frozen.add("w", init_tensor({2, 2}, Init::kOnes), true);
    CHECK_THROWS_AS(load_checkpoint(path, wrong_frozen), Error);
}

TEST_CASE("model card round-trips and mismatches are named") {
    const std::string dir = test_dir("ckpt_card");
    const std::string path = dir + "/model.card";
    const std::map<std::string, std::string> kv{
        {"d_model", "128"}, {"fusion_mode", "prefix"}, {"n_layers", "4"}};
    write_model_card(path, kv);
    const auto back = read_model_card(path);
    CHECK(back == kv);

    auto other = kv;
    other["d_model"] = "256";
    CHECK_THROWS_WITH_AS(require_card_match(other, kv), doctest::Contains("d_model"),
                         ConfigError);
    CHECK_NOTHROW(require_card_match(kv, kv));
}

}
