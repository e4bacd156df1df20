#include "config.hpp"

#include <fstream>
#include <functional>
#include <vector>

#include "instformer/error.hpp"

namespace instformer::cli {

namespace {

using nlohmann::json;

struct Field {
  std::string section;
  std::string key;
  std::function<json(const CliConfig&)> get;
  std::function<void(CliConfig&, const json&)> set;
};

std::string qualified(const std::string& section, const std::string& key) { return section + "." + key; }

template <class T>
T convert(const json& v, const std::string& name) {
  if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
    if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0 && !v.is_number_unsigned()))
      throw InvalidArgument(name + ": expected a non-negative integer, got " + v.dump());
    return v.get<T>();
  } else if constexpr (std::is_same_v<T, double>) {
    if (!v.is_number()) throw InvalidArgument(name + ": expected a number, got " + v.dump());
    return v.get<double>();
  } else if constexpr (std::is_same_v<T, Range>) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
      throw InvalidArgument(name + ": expected [lo, hi], got " + v.dump());
    return Range{v[0].get<double>(), v[1].get<double>()};
  } else {
    static_assert(std::is_same_v<T, std::string>);
    if (!v.is_string()) throw InvalidArgument(name + ": expected a string, got " + v.dump());
    return v.get<std::string>();
  }
}

template <class T>
json encode(const T& v) {
  if constexpr (std::is_same_v<T, Range>)
    return json::array({v.lo, v.hi});
  else
    return json(v);
}

template <class T, class Access>
Field field(std::string section, std::string key, Access access) {
  const std::string name = qualified(section, key);
  return {std::move(section), std::move(key),
          [access](const CliConfig& c) { return encode<T>(access(const_cast<CliConfig&>(c))); },
          [access, name](CliConfig& c, const json& v) { access(c) = convert<T>(v, name); }};
}

#define NUM(section, key, T, expr) field<T>(section, key, [](CliConfig& c) -> T& { return expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f = {
        NUM("model", "d_model", std::size_t, c.model.d_model),
        NUM("model", "n_heads", std::size_t, c.model.n_heads),
        NUM("model", "n_layers", std::size_t, c.model.n_layers),
        NUM("model", "noise_dim", std::size_t, c.model.noise_dim),
        NUM("model", "noise_scale", double, c.model.noise_scale),
        NUM("model", "max_parts", std::size_t, c.model.max_parts),
        NUM("model", "n_pc", std::size_t, c.model.n_pc),
        NUM("model", "head_width", std::size_t, c.model.head_width),
        NUM("model", "ffn_multiplier", std::size_t, c.model.ffn_multiplier),
        {"model", "encoding", [](const CliConfig& c) { return json(std::string(to_string(c.model.encoding))); },
         [](CliConfig& c, const json& v) {
           c.model.encoding = encoding_mode_from_string(convert<std::string>(v, "model.encoding"));
         }},

        NUM("train", "lr", double, c.train.optimizer.lr),
        NUM("train", "weight_decay", double, c.train.optimizer.weight_decay),
        NUM("train", "beta1", double, c.train.optimizer.beta1),
        NUM("train", "beta2", double, c.train.optimizer.beta2),
        NUM("train", "eps", double, c.train.optimizer.eps),
        NUM("train", "batch_size", std::size_t, c.train.batch_size),
        NUM("train", "epochs", std::size_t, c.train.epochs),
        NUM("train", "mon_n", std::size_t, c.train.mon_n),
        NUM("train", "seed", std::uint64_t, c.train.seed),
        NUM("train", "val_k", std::size_t, c.train.val_k),
        NUM("train", "eval_every", std::size_t, c.train.eval_every),
        NUM("train", "part_drop", double, c.train.part_drop),
        {"train", "stop_at_pa",
         [](const CliConfig& c) { return c.train.stop_at_pa ? json(*c.train.stop_at_pa) : json(nullptr); },
         [](CliConfig& c, const json& v) {
           if (v.is_null())
             c.train.stop_at_pa.reset();
           else
             c.train.stop_at_pa = convert<double>(v, "train.stop_at_pa");
         }},
        NUM("train", "w_translation", double, c.train.weights.translation),
        NUM("train", "w_rotation", double, c.train.weights.rotation),
        NUM("train", "w_shape", double, c.train.weights.shape),
        {"train", "chamfer", [](const CliConfig& c) { return json(std::string(to_string(c.train.weights.chamfer))); },
         [](CliConfig& c, const json& v) {
           c.train.weights.chamfer = chamfer_reduction_from_string(convert<std::string>(v, "train.chamfer"));
         }},

        NUM("finetune", "lr", double, c.finetune.optimizer.lr),
        NUM("finetune", "weight_decay", double, c.finetune.optimizer.weight_decay),
        NUM("finetune", "batch_size", std::size_t, c.finetune.batch_size),
        NUM("finetune", "epochs", std::size_t, c.finetune.epochs),
        NUM("finetune", "mon_n", std::size_t, c.finetune.mon_n),
        NUM("finetune", "seed", std::uint64_t, c.finetune.seed),
        NUM("finetune", "drop_prob", double, c.finetune.drop_prob),

        NUM("eval", "k", std::size_t, c.eval.k),
        NUM("eval", "seed", std::uint64_t, c.eval.seed),
        NUM("eval", "memory_drop", double, c.eval.memory_drop),
        NUM("eval", "tau_p", double, c.eval.thresholds.tau_p),
        NUM("eval", "tau_c", double, c.eval.thresholds.tau_c),
        NUM("eval", "tau_contact", double, c.eval.thresholds.tau_contact),

        {"generator", "category",
         [](const CliConfig& c) { return json(std::string(to_string(c.generator.category))); },
         [](CliConfig& c, const json& v) {
           c.generator.category = category_from_string(convert<std::string>(v, "generator.category"));
         }},
        NUM("generator", "seed", std::uint64_t, c.generator.seed),
        NUM("generator", "oversample", std::size_t, c.generator.oversample),
        NUM("generator", "arm_probability", double, c.generator.arm_probability),
        NUM("generator", "stretcher_probability", double, c.generator.stretcher_probability),
    };
    const std::pair<const char*, Range GeneratorSpec::*> ranges[] = {
        {"seat_width", &GeneratorSpec::seat_width},
        {"seat_depth", &GeneratorSpec::seat_depth},
        {"seat_thickness", &GeneratorSpec::seat_thickness},
        {"leg_length", &GeneratorSpec::leg_length},
        {"leg_width", &GeneratorSpec::leg_width},
        {"back_height", &GeneratorSpec::back_height},
        {"back_thickness", &GeneratorSpec::back_thickness},
        {"back_tilt", &GeneratorSpec::back_tilt},
        {"arm_height", &GeneratorSpec::arm_height},
        {"arm_width", &GeneratorSpec::arm_width},
        {"top_width", &GeneratorSpec::top_width},
        {"top_depth", &GeneratorSpec::top_depth},
        {"top_thickness", &GeneratorSpec::top_thickness},
        {"table_leg_length", &GeneratorSpec::table_leg_length},
        {"table_leg_radius", &GeneratorSpec::table_leg_radius},
        {"base_radius", &GeneratorSpec::base_radius},
        {"base_height", &GeneratorSpec::base_height},
        {"pole_length", &GeneratorSpec::pole_length},
        {"pole_radius", &GeneratorSpec::pole_radius},
        {"shade_radius", &GeneratorSpec::shade_radius},
        {"shade_height", &GeneratorSpec::shade_height},
    };
    for (const auto& [key, member] : ranges)
      f.push_back(field<Range>("generator", key, [member](CliConfig& c) -> Range& { return c.generator.*member; }));
    return f;
  }();
  return all;
}

#undef NUM

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields())
    if (f.section == section && f.key == key) return &f;
  return nullptr;
}

}  // namespace

void CliConfig::validate() const {
  model.validate();
  train.validate();
  finetune.validate();
  generator.validate();
  if (eval.k == 0) throw InvalidArgument("eval.k must be at least 1");
  if (!(eval.memory_drop >= 0.0 && eval.memory_drop < 1.0))
    throw InvalidArgument("eval.memory_drop must lie in [0, 1)");
  if (!(eval.thresholds.tau_p > 0.0 && eval.thresholds.tau_c > 0.0 && eval.thresholds.tau_contact > 0.0))
    throw InvalidArgument("eval thresholds must be positive");
}

CliConfig preset(std::string_view name) {
  CliConfig c;
  c.model = model_preset(name);
  if (name == "tiny") {
    c.train.epochs = 20;
    c.train.batch_size = 4;
    c.train.val_k = 2;
    c.finetune.epochs = 10;
    c.finetune.batch_size = 4;
    c.eval.k = 3;
  } else if (name == "desk") {
    c.train.optimizer.lr = 1e-3;
    c.train.weights.chamfer = ChamferReduction::mean;
    c.finetune.epochs = 200;
  } else {
    c.train.batch_size = 64;
    c.train.epochs = 1000;
    c.finetune.batch_size = 64;
    c.finetune.epochs = 500;
  }
  c.finetune.optimizer = c.train.optimizer;
  return c;
}

json to_json(const CliConfig& config) {
  json out = json::object();
  for (const auto& f : fields()) out[f.section][f.key] = f.get(config);
  return out;
}

void merge(CliConfig& config, const json& patch) {
  if (!patch.is_object()) throw InvalidArgument("config must be a JSON object");
  for (const auto& [section, body] : patch.items()) {
    if (section == "preset") continue;
    if (!body.is_object()) throw InvalidArgument("config section '" + section + "' must be an object");
    for (const auto& [key, value] : body.items()) {
      const Field* f = find_field(section, key);
      if (!f) throw InvalidArgument("unknown config key '" + qualified(section, key) + "'");
      f->set(config, value);
    }
  }
}

void apply_override(CliConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string_view::npos || dot == std::string_view::npos || dot > eq)
    throw InvalidArgument("override '" + std::string(assignment) + "' is not of the form section.key=value");
  const std::string section(assignment.substr(0, dot));
  const std::string key(assignment.substr(dot + 1, eq - dot - 1));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  merge(config, json{{section, json{{key, value}}}});
}

CliConfig load_config(const std::string& source) {
  if (source == "tiny" || source == "desk" || source == "full") return preset(source);
  std::ifstream in(source);
  if (!in) throw Error("cannot open config '" + source + "' (expected tiny|desk|full or a JSON file)");
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw FormatError("config '" + source + "' is not valid JSON");
  if (!doc.is_object()) throw FormatError("config '" + source + "' must hold a JSON object");
  CliConfig c = preset(doc.contains("preset") ? doc["preset"].get<std::string>() : std::string("desk"));
  merge(c, doc);
  return c;
}

}  // namespace instformer::cli
