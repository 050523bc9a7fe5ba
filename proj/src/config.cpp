#include "nodebench/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "nodebench/text.hpp"

namespace nodebench {

namespace pt = boost::property_tree;

namespace {

template <class T, class F>
std::string join(const std::vector<T>& items, const char* sep, F render) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += render(items[i]);
  }
  return out;
}

std::vector<std::string> list_items(const std::string& text, char sep) {
  std::vector<std::string> out;
  for (auto& item : split(text, sep)) {
    auto t = trim(item);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

/// Reads section keys, rejecting any key not consumed.
class Section {
 public:
  Section(const pt::ptree& root, const std::string& name) : name_(name) {
    if (auto child = root.get_child_optional(name)) tree_ = *child;
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [key, value] : tree_) {
      if (!used_.count(key)) throw ConfigError("unknown key '" + key + "' in [" + name_ + "]");
    }
  }
  bool has(const std::string& key) const { return tree_.find(key) != tree_.not_found(); }
  std::string str(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    return has(key) ? trim(tree_.get<std::string>(key)) : fallback;
  }
  double real(const std::string& key, double fallback) {
    return has(key) ? parse_double(str(key, ""), name_ + "." + key) : (used_.insert(key), fallback);
  }
  std::size_t count(const std::string& key, std::size_t fallback) {
    return has(key) ? static_cast<std::size_t>(parse_unsigned(str(key, ""), name_ + "." + key))
                    : (used_.insert(key), fallback);
  }

 private:
  std::string name_;
  pt::ptree tree_;
  std::set<std::string> used_;
};

}  // namespace

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("experiment.seeds must list at least one seed");
  if (jobs == 0) throw ConfigError("experiment.jobs must be positive");
  if (families.empty()) throw ConfigError("models.families must not be empty");
  if (data.dataset != "mnist" && data.dataset != "synthetic") {
    throw ConfigError("data.dataset must be mnist or synthetic, got '" + data.dataset + "'");
  }
  if (data.dataset == "synthetic" && (data.classes < 2 || data.n_per_class == 0)) {
    throw ConfigError("synthetic data needs classes >= 2 and n_per_class > 0");
  }
  model_config().validate();
  train.validate();
  for (const auto& p : perturbations) p.validate();
}

ModelConfig ExperimentConfig::model_config() const {
  ModelConfig cfg = model_config_for(data.dataset);
  if (data.dataset == "synthetic") cfg.num_classes = data.classes;
  cfg.ode = ode;
  cfg.weight_tied_repeats = weight_tied_repeats;
  cfg.weight_tied_scale = weight_tied_scale;
  return cfg;
}

std::string ExperimentConfig::serialize() const {
  auto num = [](double v) { return format_double(v); };
  auto u64 = [](std::uint64_t v) { return std::to_string(v); };
  std::ostringstream os;
  os << "[experiment]\n"
     << "name = " << name << '\n'
     << "out_dir = " << out_dir.string() << '\n'
     << "seeds = " << join(seeds, ", ", u64) << '\n'
     << "jobs = " << jobs << "\n\n";
  os << "[data]\n"
     << "dataset = " << data.dataset << '\n'
     << "root = " << data.root << '\n'
     << "train_size = " << data.train_size << '\n'
     << "test_size = " << data.test_size << '\n'
     << "seed = " << data.seed << '\n'
     << "n_per_class = " << data.n_per_class << '\n'
     << "classes = " << data.classes << '\n'
     << "separation = " << num(data.separation) << "\n\n";
  os << "[models]\n"
     << "families = " << join(families, ", ", [](RmKind k) { return family_name(k); }) << '\n'
     << "t_end = " << num(ode.t_end) << '\n'
     << "step = " << num(ode.step) << '\n'
     << "scheme = " << to_string(ode.scheme) << '\n'
     << "weight_tied_repeats = " << weight_tied_repeats << '\n'
     << "weight_tied_scale = " << num(weight_tied_scale) << "\n\n";
  os << "[train]\n"
     << "epochs = " << train.epochs << '\n'
     << "batch_size = " << train.batch_size << '\n'
     << "learning_rate = " << num(train.learning_rate) << '\n'
     << "momentum = " << num(train.momentum) << '\n'
     << "weight_decay = " << num(train.weight_decay) << '\n'
     << "lr_milestones = " << join(train.lr_milestones, ", ", num) << '\n'
     << "lr_decay = " << num(train.lr_decay) << '\n'
     << "regime = " << to_string(train.regime) << '\n'
     << "sigmas = " << join(train.sigmas, ", ", num) << '\n'
     << "adversarial_epsilon = " << num(train.adversarial_epsilon) << '\n'
     << "lambda_ss = " << num(train.lambda_ss) << '\n'
     << "max_steps = " << train.max_steps << "\n\n";
  os << "[eval]\n"
     << "perturbations = "
     << join(perturbations, "; ", [](const PerturbationSpec& p) { return p.to_string(); }) << '\n'
     << "seed = " << eval_seed << '\n';
  return os.str();
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  pt::ptree root;
  std::istringstream in(text);
  try {
    pt::read_ini(in, root);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  static const std::set<std::string> known{"experiment", "data", "models", "train", "eval"};
  for (const auto& [section, tree] : root) {
    if (!known.count(section)) throw ConfigError("unknown config section [" + section + "]");
    if (tree.empty() && !tree.data().empty()) {
      throw ConfigError("key '" + section + "' outside any section");
    }
  }

  ExperimentConfig c;
  {
    Section s(root, "experiment");
    c.name = s.str("name", c.name);
    c.out_dir = s.str("out_dir", c.out_dir.string());
    if (s.has("seeds")) {
      c.seeds.clear();
      for (const auto& item : list_items(s.str("seeds", ""), ',')) {
        c.seeds.push_back(parse_unsigned(item, "experiment.seeds"));
      }
    } else {
      s.str("seeds", "");
    }
    c.jobs = s.count("jobs", c.jobs);
  }
  {
    Section s(root, "data");
    c.data.dataset = s.str("dataset", c.data.dataset);
    c.data.root = s.str("root", c.data.root);
    c.data.train_size = s.count("train_size", c.data.train_size);
    c.data.test_size = s.count("test_size", c.data.test_size);
    c.data.seed = s.count("seed", c.data.seed);
    c.data.n_per_class = s.count("n_per_class", c.data.n_per_class);
    c.data.classes = s.count("classes", c.data.classes);
    c.data.separation = s.real("separation", c.data.separation);
  }
  {
    Section s(root, "models");
    if (s.has("families")) {
      c.families.clear();
      for (const auto& item : list_items(s.str("families", ""), ',')) c.families.push_back(parse_rm_kind(item));
    } else {
      s.str("families", "");
    }
    c.ode.t_end = s.real("t_end", c.ode.t_end);
    c.ode.step = s.real("step", c.ode.step);
    c.ode.scheme = parse_scheme(s.str("scheme", to_string(c.ode.scheme)));
    c.weight_tied_repeats = s.count("weight_tied_repeats", c.weight_tied_repeats);
    c.weight_tied_scale = s.real("weight_tied_scale", c.weight_tied_scale);
  }
  {
    Section s(root, "train");
    auto& t = c.train;
    t.epochs = s.count("epochs", t.epochs);
    t.batch_size = s.count("batch_size", t.batch_size);
    t.learning_rate = s.real("learning_rate", t.learning_rate);
    t.momentum = s.real("momentum", t.momentum);
    t.weight_decay = s.real("weight_decay", t.weight_decay);
    if (s.has("lr_milestones")) {
      t.lr_milestones.clear();
      for (const auto& item : list_items(s.str("lr_milestones", ""), ',')) {
        t.lr_milestones.push_back(parse_double(item, "train.lr_milestones"));
      }
    } else {
      s.str("lr_milestones", "");
    }
    t.lr_decay = s.real("lr_decay", t.lr_decay);
    t.regime = parse_regime(s.str("regime", to_string(t.regime)));
    if (s.has("sigmas")) {
      t.sigmas.clear();
      for (const auto& item : list_items(s.str("sigmas", ""), ',')) {
        t.sigmas.push_back(parse_double(item, "train.sigmas"));
      }
    } else {
      s.str("sigmas", "");
    }
    t.adversarial_epsilon = s.real("adversarial_epsilon", t.adversarial_epsilon);
    t.lambda_ss = s.real("lambda_ss", t.lambda_ss);
    t.max_steps = s.count("max_steps", t.max_steps);
  }
  {
    Section s(root, "eval");
    for (const auto& item : list_items(s.str("perturbations", ""), ';')) {
      c.perturbations.push_back(PerturbationSpec::parse(item));
    }
    c.eval_seed = s.count("seed", c.eval_seed);
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str());
}

void ExperimentConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write config '" + path.string() + "'");
  out << serialize();
}

std::string resolved_data_root(const DataSpec& spec) {
  const char* env = std::getenv(kDataRootEnv);
  return env && *env ? std::string(env) : spec.root;
}

Dataset load_split(const DataSpec& spec, const std::string& split) {
  if (split != "train" && split != "test") throw ConfigError("split must be train or test, got '" + split + "'");
  Dataset d;
  if (spec.dataset == "mnist") {
    const std::string root = resolved_data_root(spec);
    if (root.empty()) {
      throw InputError(std::string("no MNIST directory: set data.root or ") + kDataRootEnv);
    }
    d = load_mnist_split(root, split == "train" ? "train" : "t10k");
  } else if (spec.dataset == "synthetic") {
    BlobOptions o;
    o.n_per_class = spec.n_per_class;
    o.classes = spec.classes;
    o.separation = spec.separation;
    o.seed = spec.seed;
    const Dataset all = synthetic_blobs(o);
    // Labels cycle through the classes, so a whole number of cycles keeps both halves balanced.
    const std::size_t cut = (all.size() * 4 / 5) / spec.classes * spec.classes;
    if (cut == 0 || cut == all.size()) throw ConfigError("synthetic data too small to split");
    const bool train = split == "train";
    std::vector<std::size_t> idx(train ? cut : all.size() - cut);
    std::iota(idx.begin(), idx.end(), train ? 0 : cut);
    d = all.select(idx);
  } else {
    throw ConfigError("unknown dataset '" + spec.dataset + "'");
  }
  const std::size_t n = split == "train" ? spec.train_size : spec.test_size;
  if (n && n < d.size()) d = subset(d, n, derive_seed(spec.seed, split));
  return d;
}

}  // namespace nodebench
