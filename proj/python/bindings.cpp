#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mmpt/config_io.hpp"
#include "mmpt/errors.hpp"
#include "mmpt/eval.hpp"
#include "mmpt/fixtures.hpp"
#include "mmpt/generate.hpp"
#include "mmpt/image.hpp"
#include "mmpt/mixer.hpp"
#include "mmpt/schedule.hpp"
#include "mmpt/tensor.hpp"
#include "mmpt/tokenizer.hpp"

namespace py = pybind11;
using namespace mmpt;

namespace {

py::array_t<double> tensor_to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

Tensor array_to_tensor(const py::array& arr) {
    auto a = py::array_t<double, py::array::c_style | py::array::forcecast>::ensure(arr);
    if (!a) throw ConfigError("expected a numeric array");
    Shape shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
    std::vector<Real> values(a.data(), a.data() + a.size());
    return Tensor(std::move(shape), std::move(values));
}

std::string dict_to_json_text(const py::dict& d) {
    // ModelConfig parsing already lives on the JSON path; reuse it by
    // serializing the dict through Python's own json module.
    py::object dumps = py::module_::import("json").attr("dumps");
    return py::cast<std::string>(dumps(d));
}

GenerationPreset resolve_preset(const py::object& preset, const py::dict& overrides) {
    GenerationPreset p;
    if (py::isinstance<GenerationPreset>(preset)) {
        p = py::cast<GenerationPreset>(preset);
    } else {
        p = preset_by_name(builtin_presets(), py::cast<std::string>(preset));
    }
    for (auto item : overrides) {
        const std::string key = py::cast<std::string>(py::str(item.first));
        py::handle v = item.second;
        if (key == "max_new_tokens") p.max_new_tokens = py::cast<int>(v);
        else if (key == "beam_size") p.beam_size = py::cast<int>(v);
        else if (key == "top_p") p.top_p = py::cast<Real>(v);
        else if (key == "top_k") p.top_k = py::cast<int>(v);
        else if (key == "length_penalty") p.length_penalty = py::cast<Real>(v);
        else if (key == "no_repeat_ngram") p.no_repeat_ngram = py::cast<int>(v);
        else if (key == "do_sample") p.do_sample = py::cast<bool>(v);
        else throw ConfigError("unknown generation option \"" + key + "\"");
    }
    p.validate();
    return p;
}

// Owning wrapper; MultimodalLM itself is not movable because the parameter
// store hands out raw pointers.
class PyModel {
  public:
    PyModel(const py::dict& config, uint64_t seed)
        : model_(std::make_unique<MultimodalLM>(
              model_config_from_json_text(dict_to_json_text(config)), seed)) {}
    explicit PyModel(std::unique_ptr<MultimodalLM> m) : model_(std::move(m)) {}

    static PyModel load(const std::string& ckpt, const std::string& card) {
        return PyModel(load_model(ckpt, card));
    }

    void save(const std::string& ckpt, const std::string& card) const {
        save_model(ckpt, card, *model_);
    }

    py::dict config() const {
        py::dict d;
        for (const auto& [k, v] : model_->config().to_card()) d[py::str(k)] = v;
        return d;
    }

    py::array_t<double> condense_media(const std::string& path) const {
        NoGradGuard guard;
        return tensor_to_array(model_->condense_media(path));
    }

    py::array_t<double> forward(const std::vector<int>& text,
                                const std::optional<std::string>& media) const {
        NoGradGuard guard;
        std::optional<Tensor> vision;
        if (media) vision = model_->condense_media(*media);
        return tensor_to_array(model_->forward(vision, text));
    }

    py::dict generate(const std::string& prompt, const std::optional<std::string>& media,
                      const py::object& preset, uint64_t seed, const py::dict& overrides) const {
        NoGradGuard guard;
        GenerationPreset p = resolve_preset(preset, overrides);
        std::optional<Tensor> vision;
        if (media) vision = model_->condense_media(*media);
        GenerationResult r = mmpt::generate(*model_, tok_, vision, prompt, p, seed);
        py::dict out;
        out["text"] = py::bytes(r.text);
        out["tokens"] = r.tokens;
        out["score"] = r.score;
        return out;
    }

    std::vector<std::string> trainable_parameter_names() const {
        std::vector<std::string> names;
        for (const Parameter* p : const_cast<MultimodalLM&>(*model_).trainable_parameters())
            names.push_back(p->name);
        return names;
    }

    py::dict parameters() const {
        py::dict out;
        for (const auto& p : model_->params().all())
            out[py::str(p->name)] = tensor_to_array(p->value);
        return out;
    }

    int64_t text_offset(bool has_vision) const { return model_->text_offset(has_vision); }

  private:
    std::unique_ptr<MultimodalLM> model_;
    ByteTokenizer tok_;
};

py::dict report_to_dict(const CategoryReport& rep) {
    py::dict out;
    out["overall"] = rep.overall;
    out["correct"] = rep.correct_total;
    out["total"] = rep.grand_total;
    out["errors"] = rep.error_verdicts;
    py::dict cats;
    for (const auto& [name, count] : rep.categories) {
        py::dict c;
        c["correct"] = count.correct;
        c["total"] = count.total;
        cats[py::str(name)] = c;
    }
    out["categories"] = cats;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "multimodal prefix-tuning core";

    // Translators run newest-first, so the base registration goes first and
    // the derived classes shadow it.
    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);

    py::class_<ByteTokenizer>(m, "Tokenizer")
        .def(py::init<>())
        .def_property_readonly("vocab_size", &ByteTokenizer::vocab_size)
        .def_readonly_static("BOS", &ByteTokenizer::kBos)
        .def_readonly_static("EOS", &ByteTokenizer::kEos)
        .def_readonly_static("MEDIA", &ByteTokenizer::kMedia)
        .def_readonly_static("PAD", &ByteTokenizer::kPad)
        .def("encode",
             [](const ByteTokenizer& t, const py::bytes& text) {
                 return t.encode(py::cast<std::string>(text));
             })
        .def("encode",
             [](const ByteTokenizer& t, const std::string& text) { return t.encode(text); })
        .def("decode", [](const ByteTokenizer& t, const std::vector<int>& ids) {
            return py::bytes(t.decode(ids));
        });

    py::class_<GenerationPreset>(m, "GenerationPreset")
        .def(py::init<>())
        .def_readwrite("name", &GenerationPreset::name)
        .def_readwrite("max_new_tokens", &GenerationPreset::max_new_tokens)
        .def_readwrite("beam_size", &GenerationPreset::beam_size)
        .def_readwrite("top_p", &GenerationPreset::top_p)
        .def_readwrite("top_k", &GenerationPreset::top_k)
        .def_readwrite("length_penalty", &GenerationPreset::length_penalty)
        .def_readwrite("no_repeat_ngram", &GenerationPreset::no_repeat_ngram)
        .def_readwrite("do_sample", &GenerationPreset::do_sample)
        .def("validate", &GenerationPreset::validate)
        .def("__repr__", [](const GenerationPreset& p) {
            std::ostringstream os;
            os << "GenerationPreset(name='" << p.name << "', max_new_tokens=" << p.max_new_tokens
               << ", beam_size=" << p.beam_size << ")";
            return os.str();
        });

    m.def("builtin_presets", &builtin_presets);
    m.def(
        "preset_by_name",
        [](const std::string& name) { return preset_by_name(builtin_presets(), name); },
        py::arg("name"));

    py::class_<PyModel>(m, "Model")
        .def(py::init<const py::dict&, uint64_t>(), py::arg("config"), py::arg("seed") = 0)
        .def_static("load", &PyModel::load, py::arg("checkpoint"), py::arg("card"))
        .def("save", &PyModel::save, py::arg("checkpoint"), py::arg("card"))
        .def("config", &PyModel::config)
        .def("condense_media", &PyModel::condense_media, py::arg("path"))
        .def("forward", &PyModel::forward, py::arg("text"), py::arg("media") = py::none())
        .def("generate", &PyModel::generate, py::arg("prompt"), py::arg("media") = py::none(),
             py::arg("preset") = "demo", py::arg("seed") = 0, py::arg("options") = py::dict())
        .def("trainable_parameter_names", &PyModel::trainable_parameter_names)
        .def("parameters", &PyModel::parameters)
        .def("text_offset", &PyModel::text_offset, py::arg("has_vision"));

    py::class_<Schedule>(m, "Schedule")
        .def(py::init([](int64_t total_steps, Real peak_lr, Real floor_lr, Real warmup_rate) {
                 StageConfig cfg;
                 cfg.name = "finetune";
                 cfg.total_steps = total_steps;
                 cfg.peak_lr = peak_lr;
                 cfg.floor_lr = floor_lr;
                 cfg.warmup_rate = warmup_rate;
                 cfg.validate();
                 return Schedule::from(cfg);
             }),
             py::arg("total_steps"), py::arg("peak_lr"), py::arg("floor_lr"),
             py::arg("warmup_rate") = 0.05)
        .def_readonly("total_steps", &Schedule::total_steps)
        .def_readonly("warmup_steps", &Schedule::warmup_steps)
        .def_readonly("peak_lr", &Schedule::peak_lr)
        .def_readonly("floor_lr", &Schedule::floor_lr)
        .def("lr_at", &Schedule::lr_at, py::arg("step"));

    m.def("build_judge_prompt", &build_judge_prompt, py::arg("question"), py::arg("prediction"),
          py::arg("ground_truth"));
    m.def("golden_judge_prompt", &golden_judge_prompt);
    m.def(
        "parse_verdict",
        [](const std::string& reply) { return verdict_name(parse_verdict(reply)); },
        py::arg("reply"));
    m.def("normalize_answer", &normalize_answer, py::arg("text"));
    m.def("stub_answer_match", &stub_answer_match, py::arg("ground_truth"), py::arg("prediction"));

    m.def(
        "aggregate_verdicts",
        [](const py::list& items, const py::list& verdicts) {
            std::vector<OpenVQAItem> its;
            for (auto h : items) {
                py::dict d = py::cast<py::dict>(h);
                OpenVQAItem it;
                it.id = py::cast<std::string>(d["id"]);
                it.media = py::cast<std::string>(d["media"]);
                it.question = py::cast<std::string>(d["question"]);
                it.answer = py::cast<std::string>(d["answer"]);
                it.category = py::cast<std::string>(d["category"]);
                its.push_back(std::move(it));
            }
            std::vector<JudgeVerdict> vds;
            for (auto h : verdicts) {
                py::dict d = py::cast<py::dict>(h);
                JudgeVerdict v;
                v.item_id = py::cast<std::string>(d["id"]);
                const std::string verdict = py::cast<std::string>(d["verdict"]);
                if (verdict == "yes") v.verdict = Verdict::kYes;
                else if (verdict == "no") v.verdict = Verdict::kNo;
                else if (verdict == "error") v.verdict = Verdict::kError;
                else throw DataError("verdict must be yes, no, or error");
                vds.push_back(std::move(v));
            }
            return report_to_dict(aggregate(its, vds));
        },
        py::arg("items"), py::arg("verdicts"));

    m.def(
        "mixture_weights",
        [](const std::string& manifest_path, const std::string& stage) {
            MixStage s;
            if (stage == "pretrain") s = MixStage::kPretrain;
            else if (stage == "finetune") s = MixStage::kFinetune;
            else throw ConfigError("stage must be pretrain or finetune");
            MixtureSpec spec = MixtureSpec::build(TaskManifest::load(manifest_path), s);
            py::dict out;
            for (const auto& e : spec.entries) out[py::str(e.name)] = e.weight;
            return out;
        },
        py::arg("manifest"), py::arg("stage"));

    m.def(
        "make_fixtures",
        [](const std::string& root, uint64_t seed) {
            FixtureLayout fx = make_fixtures(root, seed);
            py::dict out;
            out["root"] = fx.root;
            out["manifest"] = fx.manifest;
            out["templates"] = fx.templates;
            out["presets"] = fx.presets;
            out["judge_prompt"] = fx.judge_prompt;
            out["prompt_seeds"] = fx.prompt_seeds;
            out["mem32"] = fx.mem32;
            out["mem16"] = fx.mem16;
            out["vqa_items_image"] = fx.vqa_items_image;
            out["vqa_items_video"] = fx.vqa_items_video;
            out["sheet_clean"] = fx.sheet_clean;
            out["sheet_tie3"] = fx.sheet_tie3;
            out["sheet_tie11"] = fx.sheet_tie11;
            out["pipeline224"] = fx.pipeline224;
            out["pipeline420"] = fx.pipeline420;
            return out;
        },
        py::arg("root"), py::arg("seed") = 0);

    m.def(
        "softmax",
        [](const py::array& x) {
            NoGradGuard guard;
            return tensor_to_array(softmax_lastdim(array_to_tensor(x)));
        },
        py::arg("x"));
    m.def(
        "resize_grid",
        [](const py::array& x, int64_t rows_in, int64_t cols_in, int64_t rows_out,
           int64_t cols_out) {
            NoGradGuard guard;
            return tensor_to_array(bilinear_resize_grid(
                array_to_tensor(x), static_cast<int>(rows_in), static_cast<int>(cols_in),
                static_cast<int>(rows_out), static_cast<int>(cols_out)));
        },
        py::arg("x"), py::arg("rows_in"), py::arg("cols_in"), py::arg("rows_out"),
        py::arg("cols_out"));

    m.def(
        "save_raw_image",
        [](const std::string& path, const py::array& rgb) {
            auto a = py::array_t<double, py::array::c_style | py::array::forcecast>::ensure(rgb);
            if (!a || a.ndim() != 3 || a.shape(0) != 3)
                throw ConfigError("expected an array shaped [3, height, width]");
            ImageTensor img;
            img.height = static_cast<int>(a.shape(1));
            img.width = static_cast<int>(a.shape(2));
            img.data.resize(static_cast<size_t>(a.size()));
            for (py::ssize_t i = 0; i < a.size(); ++i)
                img.data[static_cast<size_t>(i)] = static_cast<float>(a.data()[i]);
            save_raw_image(path, img);
        },
        py::arg("path"), py::arg("rgb"));
    m.def(
        "load_raw_image",
        [](const std::string& path) {
            ImageTensor img = load_raw_image(path);
            py::array_t<double> out({py::ssize_t(3), py::ssize_t(img.height), py::ssize_t(img.width)});
            for (size_t i = 0; i < img.data.size(); ++i) out.mutable_data()[i] = img.data[i];
            return out;
        },
        py::arg("path"));
}
