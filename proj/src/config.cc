#include "gebc/config.h"

#include <set>

#include "gebc/error.h"

namespace gebc {

using nlohmann::json;
using nlohmann::ordered_json;

RunConfig desk_profile() {
  RunConfig c;
  c.profile = "desk";
  c.extractors = {
      {"blip2", ExtractorKind::kPrimary, 4, 32, 12, "synthetic"},
      {"clip", ExtractorKind::kFrameLevel, 1, 48, 8, "synthetic"},
      {"omnivore", ExtractorKind::kFrameLevel, 1, 64, 16, "synthetic"},
      {"vinvl", ExtractorKind::kRegionLevel, 1, 40, 16, "synthetic"},
  };
  c.features.steps = 8;
  c.features.num_objects = 8;
  c.adapter = {32, 32, 4, 4, 2, 4, 64, 64};
  c.boundary.model_dim = 32;
  c.boundary.pe_dim = 16;
  c.lm = TinyLMConfig{};
  c.decode.max_length = kDefaultMaxCaptionLength;
  // Larger steps than the full-size recipe so the tiny model moves within a
  // handful of epochs.
  c.train.batch_size = 4;
  c.train.lr_init = 5e-3;
  c.train.lr_min = 5e-4;
  c.train.lr_warmup_start = 5e-5;
  return c;
}

RunConfig full_profile() {
  RunConfig c;
  c.profile = "full";
  c.extractors = {
      {"blip2", ExtractorKind::kPrimary, 32, 768, 12, "pretrained"},
      {"clip", ExtractorKind::kFrameLevel, 1, 768, 8, "pretrained"},
      {"omnivore", ExtractorKind::kFrameLevel, 1, 1536, 16, "pretrained"},
      {"vinvl", ExtractorKind::kRegionLevel, 1, 2048, 16, "pretrained"},
  };
  c.features.steps = 0;
  c.features.num_objects = 50;
  c.adapter = VideoAdapterConfig{};
  c.boundary = BoundaryEncoderConfig{};
  c.lm_plugin = "opt-13b";
  c.lm.vocab_size = 50272;
  c.lm.hidden_dim = 5120;
  c.lm.num_layers = 40;
  c.lm.num_heads = 40;
  c.lm.feedforward_dim = 20480;
  c.lm.max_sequence_length = 2048;
  c.train = TrainConfig{};
  return c;
}

RunConfig profile_defaults(const std::string& name) {
  if (name == "desk") return desk_profile();
  if (name == "full") return full_profile();
  throw InvalidConfig("unknown profile '" + name + "' (expected desk or full)");
}

namespace {

std::string_view resize_name(ResizeMode m) { return m == ResizeMode::kLinear ? "linear" : "subsample"; }
std::string_view encoding_name(BoxEncoding e) {
  return e == BoxEncoding::kStartEnd ? "start_end" : "center_width";
}
std::string_view decay_name(DecayShape d) { return d == DecayShape::kCosine ? "cosine" : "linear"; }

ordered_json extractor_json(const ExtractorSpec& s) {
  return {{"name", s.name},
          {"kind", extractor_kind_name(s.kind)},
          {"tokens_per_frame", s.tokens_per_frame},
          {"channels", s.channels},
          {"stride", s.stride},
          {"backend", s.backend}};
}

ordered_json architecture_json(const RunConfig& c) {
  ordered_json j;
  j["extractors"] = ordered_json::array();
  for (const auto& s : c.extractors) j["extractors"].push_back(extractor_json(s));
  j["features"] = {{"steps", c.features.steps},
                   {"num_objects", c.features.num_objects},
                   {"resize", resize_name(c.features.resize)},
                   {"zero_padded_rows", c.features.zero_padded_rows},
                   {"frame_dim", c.features.frame_dim}};
  j["adapter"] = {{"model_dim", c.adapter.model_dim},
                  {"primary_queries", c.adapter.primary_queries},
                  {"other_queries", c.adapter.other_queries},
                  {"num_layers", c.adapter.num_layers},
                  {"num_heads", c.adapter.num_heads},
                  {"feedforward_dim", c.adapter.feedforward_dim},
                  {"max_steps", c.adapter.max_steps}};
  j["boundary"] = {{"pe_dim", c.boundary.pe_dim},
                   {"pe_base", c.boundary.pe_base},
                   {"encoding", encoding_name(c.boundary.encoding)}};
  j["lm"] = {{"plugin", c.lm_plugin},
             {"vocab_size", c.lm.vocab_size},
             {"hidden_dim", c.lm.hidden_dim},
             {"num_layers", c.lm.num_layers},
             {"num_heads", c.lm.num_heads},
             {"feedforward_dim", c.lm.feedforward_dim},
             {"max_sequence_length", c.lm.max_sequence_length},
             {"seed", c.lm.seed}};
  return j;
}

// Reads one JSON object, rejecting unknown keys once every field was taken.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw InvalidConfig(where_ + " must be an object");
  }
  ~ObjectReader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw InvalidConfig("unknown key '" + where_ + "." + k + "'");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_[key].is_null()) return;
    const json& v = j_[key];
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw InvalidConfig("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw InvalidConfig("");
        if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned() &&
            v.get<int64_t>() < 0) {
          throw InvalidConfig("");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw InvalidConfig("");
      } else {
        if (!v.is_string()) throw InvalidConfig("");
      }
      out = v.get<T>();
    } catch (const InvalidConfig&) {
      throw InvalidConfig("'" + where_ + "." + key + "' has the wrong type: " + v.dump());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) && !j_[key].is_null() ? &j_[key] : nullptr;
  }

  const std::string& where() const { return where_; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

template <typename Enum, typename Parse>
void get_enum(ObjectReader& r, const char* key, Enum& out, Parse parse) {
  std::string name;
  r.get(key, name);
  if (name.empty()) return;
  const std::optional<Enum> v = parse(name);
  if (!v) throw InvalidConfig("'" + r.where() + "." + key + "' has unknown value '" + name + "'");
  out = *v;
}

}  // namespace

ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["profile"] = c.profile;
  ordered_json data = ordered_json::object();
  for (const auto& [split, path] : c.annotations) data[split] = path.string();
  data["cache_dir"] = c.cache_dir.string();
  j["data"] = data;
  const ordered_json arch = architecture_json(c);
  for (const auto& [k, v] : arch.items()) j[k] = v;
  j["decode"] = {{"max_length", c.decode.max_length}, {"beam_width", c.decode.beam_width}};
  const TrainConfig& t = c.train;
  j["train"] = {{"weight_decay", t.weight_decay},
                {"batch_size", t.batch_size},
                {"lr_init", t.lr_init},
                {"lr_min", t.lr_min},
                {"lr_warmup_start", t.lr_warmup_start},
                {"warmup_steps", t.warmup_steps},
                {"warmup_fraction", t.warmup_fraction},
                {"max_epochs", t.max_epochs},
                {"max_steps", t.max_steps},
                {"grad_clip", t.grad_clip},
                {"decay", decay_name(t.decay)},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"adam_eps", t.adam_eps}};
  j["seed"] = c.seed;
  j["deterministic"] = c.deterministic;
  j["output_dir"] = c.output_dir.string();
  return j;
}

RunConfig from_json(const json& j) {
  ObjectReader root(j, "config");
  std::string profile = "desk";
  root.get("profile", profile);
  RunConfig c = profile_defaults(profile);

  if (const json* d = root.child("data")) {
    if (!d->is_object()) throw InvalidConfig("config.data must be an object");
    for (const auto& [k, v] : d->items()) {
      if (!v.is_string()) throw InvalidConfig("config.data." + k + " must be a path string");
      if (k == "cache_dir") {
        c.cache_dir = v.get<std::string>();
      } else if (k == "train" || k == "val" || k == "test") {
        c.annotations[k] = v.get<std::string>();
      } else {
        throw InvalidConfig("unknown key 'config.data." + k + "'");
      }
    }
  }

  if (const json* ex = root.child("extractors")) {
    if (!ex->is_array()) throw InvalidConfig("config.extractors must be an array");
    c.extractors.clear();
    for (size_t i = 0; i < ex->size(); ++i) {
      ObjectReader r((*ex)[i], "config.extractors[" + std::to_string(i) + "]");
      ExtractorSpec s;
      r.get("name", s.name);
      get_enum(r, "kind", s.kind, parse_extractor_kind);
      r.get("tokens_per_frame", s.tokens_per_frame);
      r.get("channels", s.channels);
      r.get("stride", s.stride);
      r.get("backend", s.backend);
      c.extractors.push_back(std::move(s));
    }
  }

  if (const json* f = root.child("features")) {
    ObjectReader r(*f, "config.features");
    r.get("steps", c.features.steps);
    r.get("num_objects", c.features.num_objects);
    get_enum(r, "resize", c.features.resize, [](const std::string& s) -> std::optional<ResizeMode> {
      if (s == "linear") return ResizeMode::kLinear;
      if (s == "subsample") return ResizeMode::kSubsample;
      return std::nullopt;
    });
    r.get("zero_padded_rows", c.features.zero_padded_rows);
    r.get("frame_dim", c.features.frame_dim);
  }

  if (const json* a = root.child("adapter")) {
    ObjectReader r(*a, "config.adapter");
    r.get("model_dim", c.adapter.model_dim);
    r.get("primary_queries", c.adapter.primary_queries);
    r.get("other_queries", c.adapter.other_queries);
    r.get("num_layers", c.adapter.num_layers);
    r.get("num_heads", c.adapter.num_heads);
    r.get("feedforward_dim", c.adapter.feedforward_dim);
    r.get("max_steps", c.adapter.max_steps);
  }

  if (const json* b = root.child("boundary")) {
    ObjectReader r(*b, "config.boundary");
    r.get("pe_dim", c.boundary.pe_dim);
    r.get("pe_base", c.boundary.pe_base);
    get_enum(r, "encoding", c.boundary.encoding,
             [](const std::string& s) -> std::optional<BoxEncoding> {
               if (s == "start_end") return BoxEncoding::kStartEnd;
               if (s == "center_width") return BoxEncoding::kCenterWidth;
               return std::nullopt;
             });
  }

  if (const json* l = root.child("lm")) {
    ObjectReader r(*l, "config.lm");
    r.get("plugin", c.lm_plugin);
    r.get("vocab_size", c.lm.vocab_size);
    r.get("hidden_dim", c.lm.hidden_dim);
    r.get("num_layers", c.lm.num_layers);
    r.get("num_heads", c.lm.num_heads);
    r.get("feedforward_dim", c.lm.feedforward_dim);
    r.get("max_sequence_length", c.lm.max_sequence_length);
    r.get("seed", c.lm.seed);
  }

  if (const json* d = root.child("decode")) {
    ObjectReader r(*d, "config.decode");
    r.get("max_length", c.decode.max_length);
    r.get("beam_width", c.decode.beam_width);
  }

  if (const json* t = root.child("train")) {
    ObjectReader r(*t, "config.train");
    r.get("weight_decay", c.train.weight_decay);
    r.get("batch_size", c.train.batch_size);
    r.get("lr_init", c.train.lr_init);
    r.get("lr_min", c.train.lr_min);
    r.get("lr_warmup_start", c.train.lr_warmup_start);
    r.get("warmup_steps", c.train.warmup_steps);
    r.get("warmup_fraction", c.train.warmup_fraction);
    r.get("max_epochs", c.train.max_epochs);
    r.get("max_steps", c.train.max_steps);
    r.get("grad_clip", c.train.grad_clip);
    get_enum(r, "decay", c.train.decay, [](const std::string& s) -> std::optional<DecayShape> {
      if (s == "cosine") return DecayShape::kCosine;
      if (s == "linear") return DecayShape::kLinear;
      return std::nullopt;
    });
    r.get("beta1", c.train.beta1);
    r.get("beta2", c.train.beta2);
    r.get("adam_eps", c.train.adam_eps);
  }

  root.get("seed", c.seed);
  root.get("deterministic", c.deterministic);
  std::string out = c.output_dir.string();
  root.get("output_dir", out);
  c.output_dir = out;
  c.adapter.lm_dim = c.lm.hidden_dim;
  c.boundary.model_dim = c.adapter.model_dim;
  c.train.seed = c.seed;
  return c;
}

RunConfig merge_config(const json& document, const std::filesystem::path& base_dir) {
  RunConfig c = from_json(document);
  auto resolve = [&](std::filesystem::path& p) {
    if (!p.empty() && p.is_relative() && !base_dir.empty()) p = base_dir / p;
  };
  for (auto& [split, path] : c.annotations) resolve(path);
  resolve(c.cache_dir);
  resolve(c.output_dir);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw InvalidConfig("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return merge_config(j, path.parent_path());
}

void validate(const RunConfig& c) {
  if (c.profile != "desk" && c.profile != "full") throw InvalidConfig("unknown profile");
  if (c.features.steps < 1) {
    throw InvalidConfig("features.steps (L) must be set to a positive value for profile '" +
                        c.profile + "'");
  }
  if (c.features.steps > c.adapter.max_steps) {
    throw InvalidConfig("features.steps exceeds adapter.max_steps");
  }
  if (c.features.num_objects < 1) throw InvalidConfig("features.num_objects must be >= 1");
  if (c.features.frame_dim < 1) throw InvalidConfig("features.frame_dim must be >= 1");
  int primaries = 0;
  std::set<std::string> names;
  for (const auto& s : c.extractors) {
    if (s.name.empty()) throw InvalidConfig("extractor without a name");
    if (!names.insert(s.name).second) throw InvalidConfig("duplicate extractor '" + s.name + "'");
    if (s.tokens_per_frame < 1 || s.channels < 1) {
      throw InvalidConfig("extractor '" + s.name + "' needs positive tokens and channels");
    }
    if (s.stride < 1) throw InvalidStride("extractor '" + s.name + "' has stride < 1");
    if (s.kind == ExtractorKind::kPrimary) {
      ++primaries;
      if (s.channels != c.adapter.model_dim) {
        throw InvalidConfig("primary extractor channels must equal adapter.model_dim");
      }
    }
  }
  if (primaries != 1) throw InvalidConfig("exactly one primary extractor is required");
  validate(VideoQFormerConfig{c.adapter.primary_queries, c.adapter.model_dim, c.adapter.num_layers,
                              c.adapter.num_heads, c.adapter.feedforward_dim});
  if (c.adapter.other_queries < 1) throw InvalidConfig("adapter.other_queries must be >= 1");
  if (c.boundary.pe_dim < 2 || c.boundary.pe_dim % 2 != 0) {
    throw InvalidConfig("boundary.pe_dim must be a positive even number");
  }
  if (c.boundary.pe_base <= 1.0) throw InvalidConfig("boundary.pe_base must exceed 1");
  if (c.lm_plugin != "stub") {
    throw InvalidConfig("LM plugin '" + c.lm_plugin + "' is not available in this build");
  }
  if (c.lm.vocab_size < 3 || c.lm.hidden_dim < 1 || c.lm.num_layers < 1 || c.lm.num_heads < 1 ||
      c.lm.hidden_dim % c.lm.num_heads != 0 || c.lm.feedforward_dim < 1 ||
      c.lm.max_sequence_length < 2) {
    throw InvalidConfig("invalid LM dimensions");
  }
  if (c.decode.max_length < 1 || c.decode.beam_width < 1) {
    throw InvalidConfig("decode.max_length and decode.beam_width must be >= 1");
  }
  validate(c.train);
}

ModelConfig model_config(const RunConfig& c) {
  ModelConfig m;
  m.extractors = c.extractors;
  m.adapter = c.adapter;
  m.adapter.lm_dim = c.lm.hidden_dim;
  m.boundary = c.boundary;
  m.boundary.model_dim = c.adapter.model_dim;
  m.zero_padded_rows = c.features.zero_padded_rows;
  m.seed = c.seed;
  return m;
}

uint64_t config_hash(const RunConfig& c) { return fnv1a(architecture_json(c).dump()); }

}  // namespace gebc
