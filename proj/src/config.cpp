#include "wcell/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <stdexcept>

namespace wcell {

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T out{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("bad value for " + key + ": '" + text + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true" || text == "yes" || text == "on") return true;
  if (text == "0" || text == "false" || text == "no" || text == "off") return false;
  throw std::invalid_argument("bad boolean for " + key + ": '" + text + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::vector<std::pair<std::string, Setter>>& registry() {
  static const std::vector<std::pair<std::string, Setter>> table = {
      {"k", [](RunConfig& c, auto& k, auto& v) { c.model.k = parse_number<Index>(k, v); }},
      {"if", [](RunConfig& c, auto& k, auto& v) { c.model.frames = parse_number<Index>(k, v); }},
      {"blocks", [](RunConfig& c, auto& k, auto& v) { c.model.blocks = parse_number<Index>(k, v); }},
      {"height", [](RunConfig& c, auto& k, auto& v) { c.model.input_h = parse_number<Index>(k, v); }},
      {"width", [](RunConfig& c, auto& k, auto& v) { c.model.input_w = parse_number<Index>(k, v); }},
      {"upsample_mode",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "transposed") {
           c.model.upsample = UpsampleMode::kTransposed;
         } else if (v == "nearest") {
           c.model.upsample = UpsampleMode::kNearest;
         } else {
           throw std::invalid_argument("bad value for " + k + ": '" + v + "' (transposed|nearest)");
         }
       }},
      {"head_kernel", [](RunConfig& c, auto& k, auto& v) { c.model.head_kernel = parse_number<Index>(k, v); }},
      {"recon",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "l1") {
           c.loss.reconstruction = Reconstruction::kL1;
         } else if (v == "l2") {
           c.loss.reconstruction = Reconstruction::kL2;
         } else if (v == "dssim") {
           c.loss.reconstruction = Reconstruction::kDssim;
         } else {
           throw std::invalid_argument("bad value for " + k + ": '" + v + "' (l1|l2|dssim)");
         }
       }},
      {"lambda1", [](RunConfig& c, auto& k, auto& v) { c.loss.lambda_perceptual = parse_number<double>(k, v); }},
      {"lambda2", [](RunConfig& c, auto& k, auto& v) { c.loss.lambda_decay = parse_number<double>(k, v); }},
      {"extractor",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "none") {
           c.loss.extractor = ExtractorKind::kNone;
         } else if (v == "random_conv") {
           c.loss.extractor = ExtractorKind::kRandomConv;
         } else if (v == "vgg16") {
           c.loss.extractor = ExtractorKind::kVgg16;
         } else {
           throw std::invalid_argument("bad value for " + k + ": '" + v + "' (none|random_conv|vgg16)");
         }
       }},
      {"extractor_seed",
       [](RunConfig& c, auto& k, auto& v) { c.loss.extractor_seed = parse_number<std::uint64_t>(k, v); }},
      {"extractor_width", [](RunConfig& c, auto& k, auto& v) { c.loss.extractor_width = parse_number<Index>(k, v); }},
      {"vgg_weights", [](RunConfig& c, auto&, auto& v) { c.loss.vgg_weights = v; }},
      {"ssim_convention",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "paper") {
           c.loss.ssim_convention = SsimConvention::kPaper;
         } else if (v == "standard") {
           c.loss.ssim_convention = SsimConvention::kStandard;
         } else {
           throw std::invalid_argument("bad value for " + k + ": '" + v + "' (paper|standard)");
         }
       }},
      {"decay_all", [](RunConfig& c, auto& k, auto& v) { c.loss.decay_all = parse_bool(k, v); }},
      {"iterations", [](RunConfig& c, auto& k, auto& v) { c.train.iterations = parse_number<std::int64_t>(k, v); }},
      {"batch", [](RunConfig& c, auto& k, auto& v) { c.train.batch = parse_number<std::size_t>(k, v); }},
      {"lr", [](RunConfig& c, auto& k, auto& v) { c.train.adam.lr = parse_number<double>(k, v); }},
      {"beta1", [](RunConfig& c, auto& k, auto& v) { c.train.adam.beta1 = parse_number<double>(k, v); }},
      {"beta2", [](RunConfig& c, auto& k, auto& v) { c.train.adam.beta2 = parse_number<double>(k, v); }},
      {"eps", [](RunConfig& c, auto& k, auto& v) { c.train.adam.eps = parse_number<double>(k, v); }},
      {"seed", [](RunConfig& c, auto& k, auto& v) { c.train.seed = parse_number<std::uint64_t>(k, v); }},
      {"checkpoint_interval",
       [](RunConfig& c, auto& k, auto& v) { c.train.checkpoint_interval = parse_number<std::int64_t>(k, v); }},
      {"eval_interval",
       [](RunConfig& c, auto& k, auto& v) { c.train.eval_interval = parse_number<std::int64_t>(k, v); }},
      {"augment", [](RunConfig& c, auto& k, auto& v) { c.train.augment = parse_bool(k, v); }},
      {"sampling",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "epoch") {
           c.train.with_replacement = false;
         } else if (v == "replacement") {
           c.train.with_replacement = true;
         } else {
           throw std::invalid_argument("bad value for " + k + ": '" + v + "' (epoch|replacement)");
         }
       }},
      {"data", [](RunConfig& c, auto&, auto& v) { c.data = v; }},
      {"split_seed", [](RunConfig& c, auto& k, auto& v) { c.split_seed = parse_number<std::uint64_t>(k, v); }},
      {"out_dir", [](RunConfig& c, auto&, auto& v) { c.out_dir = v; }},
      {"workers", [](RunConfig& c, auto& k, auto& v) { c.workers = parse_number<int>(k, v); }},
  };
  return table;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& [name, setter] : registry()) {
    if (name == key) {
      setter(*this, key, value);
      assigned.insert(key);
      return;
    }
  }
  throw std::invalid_argument("unknown config key: " + key);
}

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  train.validate();
  if (workers < 1) throw std::invalid_argument("workers must be >= 1");
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& entry : registry()) out.push_back(entry.first);
    return out;
  }();
  return names;
}

void parse_run_config(std::istream& in, RunConfig& config) {
  std::string line;
  for (int number = 1; std::getline(in, line); ++number) {
    const std::string body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(number) + ": expected key = value");
    }
    try {
      config.set(trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(number) + ": " + e.what());
    }
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  RunConfig config;
  parse_run_config(in, config);
  return config;
}

}  // namespace wcell
