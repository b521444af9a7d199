#include "dvn/harness/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>
#include <type_traits>

#include "dvn/errors.hpp"
#include "dvn/rng.hpp"

namespace dvn::harness {

const ConfigEntry* ConfigSection::find(std::string_view key) const {
    for (const auto& e : entries)
        if (e.key == key) return &e;
    return nullptr;
}

const ConfigSection* ConfigDocument::find(std::string_view name) const {
    for (const auto& s : sections)
        if (s.name == name) return &s;
    return nullptr;
}

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

bool valid_name(std::string_view s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
    return true;
}

}  // namespace

ConfigDocument parse_config_document(std::istream& in) {
    ConfigDocument doc;
    doc.sections.push_back({"", 0, {}});
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const auto cut = raw.find_first_of("#;");
        const std::string line = trim(cut == std::string::npos ? raw : raw.substr(0, cut));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("unterminated section header", line_no);
            std::string name = trim(std::string_view(line).substr(1, line.size() - 2));
            if (!valid_name(name)) throw ConfigError("bad section name '" + name + "'", line_no);
            if (doc.find(name)) throw ConfigError("duplicate section [" + name + "]", line_no);
            doc.sections.push_back({std::move(name), line_no, {}});
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("expected 'key = value'", line_no);
        std::string key = trim(std::string_view(line).substr(0, eq));
        std::string value = trim(std::string_view(line).substr(eq + 1));
        if (!valid_name(key)) throw ConfigError("bad key '" + key + "'", line_no);
        auto& sec = doc.sections.back();
        if (sec.find(key)) throw ConfigError("duplicate key '" + key + "'", line_no);
        sec.entries.push_back({std::move(key), std::move(value), line_no});
    }
    if (in.bad()) throw ConfigError("read failure");
    return doc;
}

namespace {

// Typed access to one section; remembers which keys were consumed so that
// leftovers can be reported as unknown.
class Reader {
public:
    explicit Reader(const ConfigSection* s) : sec_(s) {}

    bool has(std::string_view key) const { return sec_ && sec_->find(key); }

    template <typename T>
    void get(std::string_view key, T& out) {
        if (!sec_) return;
        const ConfigEntry* e = sec_->find(key);
        if (!e) return;
        used_.insert(e->key);
        out = convert<T>(*e);
    }

    void finish() const {
        if (!sec_) return;
        for (const auto& e : sec_->entries)
            if (!used_.count(e.key))
                throw ConfigError("unknown key '" + e.key + "' in section [" + sec_->name + "]", e.line);
    }

    std::size_t line() const { return sec_ ? sec_->line : 0; }

    std::size_t line_of(std::string_view key) const {
        const ConfigEntry* e = sec_ ? sec_->find(key) : nullptr;
        return e ? e->line : line();
    }

private:
    template <typename T>
    static T convert(const ConfigEntry& e);

    const ConfigSection* sec_;
    std::set<std::string> used_;
};

[[noreturn]] void bad_value(const ConfigEntry& e, std::string_view expected) {
    throw ConfigError("key '" + e.key + "': expected " + std::string(expected) + ", got '" + e.value + "'", e.line);
}

template <typename T>
T parse_number(const ConfigEntry& e, std::string_view text, std::string_view expected) {
    T v{};
    const char* b = text.data();
    const char* end = b + text.size();
    auto [p, ec] = std::from_chars(b, end, v);
    if (ec != std::errc() || p != end) bad_value(e, expected);
    return v;
}

template <>
int Reader::convert<int>(const ConfigEntry& e) {
    return parse_number<int>(e, e.value, "an integer");
}
template <>
unsigned Reader::convert<unsigned>(const ConfigEntry& e) {
    return parse_number<unsigned>(e, e.value, "a non-negative integer");
}
template <>
std::uint64_t Reader::convert<std::uint64_t>(const ConfigEntry& e) {
    return parse_number<std::uint64_t>(e, e.value, "a non-negative integer");
}
template <>
double Reader::convert<double>(const ConfigEntry& e) {
    const double v = parse_number<double>(e, e.value, "a number");
    if (!std::isfinite(v)) bad_value(e, "a finite number");
    return v;
}
template <>
bool Reader::convert<bool>(const ConfigEntry& e) {
    if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
    if (e.value == "false" || e.value == "0" || e.value == "no") return false;
    bad_value(e, "true or false");
}
template <>
std::string Reader::convert<std::string>(const ConfigEntry& e) {
    return e.value;
}
template <>
std::filesystem::path Reader::convert<std::filesystem::path>(const ConfigEntry& e) {
    if (e.value.empty()) bad_value(e, "a path");
    return e.value;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    if (out.size() == 1 && out[0].empty()) out.clear();
    return out;
}

template <>
std::vector<int> Reader::convert<std::vector<int>>(const ConfigEntry& e) {
    std::vector<int> out;
    for (const auto& item : split_list(e.value)) {
        const int v = parse_number<int>(e, item, "a comma-separated list of positive integers");
        if (v < 1) bad_value(e, "a comma-separated list of positive integers");
        out.push_back(v);
    }
    return out;
}
template <>
std::vector<double> Reader::convert<std::vector<double>>(const ConfigEntry& e) {
    std::vector<double> out;
    for (const auto& item : split_list(e.value)) out.push_back(parse_number<double>(e, item, "a list of numbers"));
    return out;
}

template <typename Enum, typename Fn>
void get_enum(Reader& r, std::string_view key, Enum& out, Fn from_string, std::string_view choices) {
    std::string text;
    if (!r.has(key)) return;
    r.get(key, text);
    try {
        out = from_string(text);
    } catch (const std::exception&) {
        throw ConfigError("key '" + std::string(key) + "': expected one of " + std::string(choices) + ", got '" + text + "'",
                          r.line_of(key));
    }
}

IdKind id_kind_from_string(std::string_view s) {
    if (s == "synthetic") return IdKind::synthetic;
    if (s == "sector") return IdKind::sector;
    if (s == "file") return IdKind::file;
    throw ArgumentError("bad id kind");
}

NegativeKind negative_kind_from_string(std::string_view s) {
    if (s == "uniform") return NegativeKind::uniform;
    if (s == "gaussian") return NegativeKind::gaussian;
    if (s == "shifted") return NegativeKind::shifted;
    if (s == "gap") return NegativeKind::gap;
    if (s == "wrong_label") return NegativeKind::wrong_label;
    if (s == "file") return NegativeKind::file;
    throw ArgumentError("bad negative kind");
}

AttackMethod attack_method_from_string(std::string_view s) {
    if (s == "fgsm") return AttackMethod::fgsm;
    if (s == "bim") return AttackMethod::bim;
    throw ArgumentError("bad attack method");
}

void require(bool ok, const std::string& what, std::size_t line) {
    if (!ok) throw ConfigError(what, line);
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
    if (p.empty() || p.is_absolute() || base.empty()) return p;
    return base / p;
}

}  // namespace

std::string_view to_string(IdKind k) {
    switch (k) {
        case IdKind::synthetic: return "synthetic";
        case IdKind::sector: return "sector";
        case IdKind::file: return "file";
    }
    return "?";
}

std::string_view to_string(NegativeKind k) {
    switch (k) {
        case NegativeKind::uniform: return "uniform";
        case NegativeKind::gaussian: return "gaussian";
        case NegativeKind::shifted: return "shifted";
        case NegativeKind::gap: return "gap";
        case NegativeKind::wrong_label: return "wrong_label";
        case NegativeKind::file: return "file";
    }
    return "?";
}

std::string_view to_string(AttackMethod m) {
    return m == AttackMethod::fgsm ? "fgsm" : "bim";
}

ExperimentConfig parse_experiment_config(std::istream& in, const std::filesystem::path& base_dir) {
    const ConfigDocument doc = parse_config_document(in);
    ExperimentConfig c;

    for (const auto& sec : doc.sections) {
        if (sec.name.empty()) {
            if (!sec.entries.empty()) throw ConfigError("key outside of any section", sec.entries.front().line);
            continue;
        }
        const bool known = sec.name == "experiment" || sec.name == "id" || sec.name == "classifier" ||
                           sec.name == "verifier" || sec.name == "ablation" || sec.name.starts_with("ood.") ||
                           sec.name.starts_with("attack.");
        if (!known) throw ConfigError("unknown section [" + sec.name + "]", sec.line);
    }

    {
        Reader r(doc.find("experiment"));
        r.get("seed", c.seed);
        r.get("output_dir", c.output_dir);
        r.get("k", c.k);
        r.get("target_tpr", c.target_tpr);
        r.get("threads", c.threads);
        r.get("baseline_msp", c.baseline_msp);
        r.finish();
        require(c.k >= 1, "k must be at least 1", r.line());
        require(c.target_tpr > 0 && c.target_tpr < 1, "target_tpr must lie in (0, 1)", r.line());
    }

    {
        const ConfigSection* sec = doc.find("id");
        if (!sec) throw ConfigError("missing section [id]");
        Reader r(sec);
        auto& id = c.id;
        get_enum(r, "kind", id.kind, id_kind_from_string, "synthetic, sector, file");
        r.get("classes", id.num_classes);
        r.get("dim", id.dim);
        r.get("n", id.n);
        r.get("separation", id.separation);
        r.get("scale", id.scale);
        r.get("split_gap", id.split_gap);
        r.get("path", id.path);
        r.get("fractions", id.fractions);
        r.finish();
        id.path = resolve(id.path, base_dir);
        require(id.fractions.size() == 3, "fractions needs three entries (train, validation, test)", r.line());
        double total = 0;
        for (double f : id.fractions) {
            require(f > 0, "fractions must be positive", r.line());
            total += f;
        }
        require(std::abs(total - 1.0) < 1e-9, "fractions must sum to 1", r.line());
        if (id.kind == IdKind::file) {
            require(!id.path.empty(), "[id] kind = file needs a path", r.line());
        } else {
            require(id.num_classes >= 2, "classes must be at least 2", r.line());
            require(id.dim >= 1, "dim must be positive", r.line());
            require(id.n >= 3 * id.num_classes, "n too small for three splits", r.line());
            if (id.kind == IdKind::sector) require(id.dim >= 2, "sector data needs dim >= 2", r.line());
            if (id.split_gap > 0) require(id.kind == IdKind::sector && id.dim >= 3, "split_gap needs sector data with dim >= 3", r.line());
        }
    }

    for (const auto& sec : doc.sections) {
        if (!sec.name.starts_with("ood.")) continue;
        Reader r(&sec);
        NegativeSpec s;
        s.name = sec.name.substr(4);
        require(!s.name.empty(), "empty OOD set name", sec.line);
        require(r.has("kind"), "[" + sec.name + "] needs a kind", sec.line);
        get_enum(r, "kind", s.kind, negative_kind_from_string, "uniform, gaussian, shifted, gap, wrong_label, file");
        r.get("n", s.n);
        r.get("angle_offset", s.angle_offset);
        r.get("path", s.path);
        r.finish();
        s.path = resolve(s.path, base_dir);
        require(s.n >= 1, "n must be positive", sec.line);
        if (s.kind == NegativeKind::file) require(!s.path.empty(), "kind = file needs a path", sec.line);
        if (s.kind == NegativeKind::shifted)
            require(c.id.kind == IdKind::synthetic, "shifted OOD needs synthetic ID data", sec.line);
        if (s.kind == NegativeKind::gap)
            require(c.id.kind == IdKind::sector && c.id.split_gap > 0, "gap probes need sector ID data with split_gap > 0", sec.line);
        c.negatives.push_back(std::move(s));
    }

    for (const auto& sec : doc.sections) {
        if (!sec.name.starts_with("attack.")) continue;
        Reader r(&sec);
        AttackSpec a;
        a.name = sec.name.substr(7);
        require(!a.name.empty(), "empty attack name", sec.line);
        get_enum(r, "method", a.method, attack_method_from_string, "fgsm, bim");
        r.get("epsilon", a.config.epsilon);
        r.get("alpha", a.config.alpha);
        r.get("steps", a.config.steps);
        r.get("clip_min", a.config.clip_min);
        r.get("clip_max", a.config.clip_max);
        r.get("limit", a.limit);
        r.finish();
        try {
            validate(a.config);
        } catch (const ArgumentError& e) {
            throw ConfigError(e.what(), sec.line);
        }
        require(a.limit >= 0, "limit must be non-negative", sec.line);
        c.attacks.push_back(std::move(a));
    }

    {
        Reader r(doc.find("classifier"));
        auto& a = c.classifier_arch;
        auto& t = c.classifier_train;
        r.get("hidden", a.hidden);
        get_enum(r, "activation", a.activation, activation_from_string, "identity, tanh, relu, sigmoid");
        r.get("epochs", t.epochs);
        r.get("batch_size", t.batch_size);
        r.get("step_size", t.step_size);
        bool conv = false;
        r.get("conv", conv);
        ConvSpec cs;
        r.get("conv_height", cs.height);
        r.get("conv_width", cs.width);
        r.get("conv_channels", cs.channels);
        r.get("conv_filters", cs.filters);
        r.get("conv_kernel", cs.kernel);
        if (conv) a.conv = cs;
        r.get("checkpoint", c.classifier_checkpoint);
        r.finish();
        c.classifier_checkpoint = resolve(c.classifier_checkpoint, base_dir);
        require(t.epochs >= 0 && t.batch_size >= 1 && t.step_size > 0, "bad classifier training settings", r.line());
        if (conv)
            require(cs.height >= cs.kernel && cs.width >= cs.kernel && cs.kernel >= 1 && cs.channels >= 1 && cs.filters >= 1,
                    "bad convolution settings", r.line());
    }

    {
        Reader r(doc.find("verifier"));
        auto& a = c.verifier_arch;
        auto& t = c.verifier_train;
        r.get("latent_dim", a.latent_dim);
        r.get("encoder_hidden", a.encoder_hidden);
        r.get("decoder_hidden", a.decoder_hidden);
        r.get("critic_hidden", a.critic_hidden);
        r.get("prior_hidden", a.prior_hidden);
        get_enum(r, "activation", a.activation, activation_from_string, "identity, tanh, relu, sigmoid");
        get_enum(r, "conditioning", a.conditioning, conditioning_from_string, "x_only, x_and_y");
        r.get("input_scale", a.input_scale);
        r.get("lambda", t.lambda);
        r.get("epochs", t.epochs);
        r.get("batch_size", t.batch_size);
        r.get("model_step", t.model_step);
        r.get("critic_step", t.critic_step);
        r.get("prior_step", t.prior_step);
        r.get("k_critic_steps", t.k_critic_steps);
        r.get("dz_finetune_epochs", t.dz_finetune_epochs);
        r.get("checkpoint", c.verifier_checkpoint);
        r.finish();
        c.verifier_checkpoint = resolve(c.verifier_checkpoint, base_dir);
        a.lambda = t.lambda;
        require(a.latent_dim >= 1, "latent_dim must be positive", r.line());
        require(a.input_scale > 0, "input_scale must be positive", r.line());
        require(t.lambda >= 0, "lambda must be non-negative", r.line());
        require(t.epochs >= 0 && t.batch_size >= 1 && t.k_critic_steps >= 0 && t.dz_finetune_epochs >= 0,
                "bad verifier training settings", r.line());
        require(t.model_step > 0 && t.critic_step > 0 && t.prior_step > 0, "step sizes must be positive", r.line());
    }

    {
        Reader r(doc.find("ablation"));
        r.get("disable_mi", c.ablation.disable_mi);
        r.get("disable_prior_correction", c.ablation.disable_prior_correction);
        r.get("encoder_cond_y", c.ablation.encoder_cond_y);
        r.finish();
    }
    return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    return parse_experiment_config(in, path.parent_path());
}

namespace {

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename T>
std::string list(const std::vector<T>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ", ";
        if constexpr (std::is_floating_point_v<T>)
            s += num(v[i]);
        else
            s += std::to_string(v[i]);
    }
    return s;
}

const char* boolean(bool b) { return b ? "true" : "false"; }

}  // namespace

std::string to_config_text(const ExperimentConfig& c) {
    std::ostringstream o;
    o << "[experiment]\n"
      << "seed = " << c.seed << "\n"
      << "output_dir = " << c.output_dir.string() << "\n"
      << "k = " << c.k << "\n"
      << "target_tpr = " << num(c.target_tpr) << "\n"
      << "threads = " << c.threads << "\n"
      << "baseline_msp = " << boolean(c.baseline_msp) << "\n";

    o << "\n[id]\nkind = " << to_string(c.id.kind) << "\n";
    if (c.id.kind == IdKind::file) {
        o << "path = " << c.id.path.string() << "\n";
    } else {
        o << "classes = " << c.id.num_classes << "\n"
          << "dim = " << c.id.dim << "\n"
          << "n = " << c.id.n << "\n";
        if (c.id.kind == IdKind::synthetic) o << "separation = " << num(c.id.separation) << "\n";
        if (c.id.kind == IdKind::sector)
            o << "scale = " << num(c.id.scale) << "\n" << "split_gap = " << num(c.id.split_gap) << "\n";
    }
    o << "fractions = " << list(c.id.fractions) << "\n";

    for (const auto& s : c.negatives) {
        o << "\n[ood." << s.name << "]\nkind = " << to_string(s.kind) << "\n";
        if (s.kind != NegativeKind::wrong_label && s.kind != NegativeKind::file) o << "n = " << s.n << "\n";
        if (s.kind == NegativeKind::shifted) o << "angle_offset = " << num(s.angle_offset) << "\n";
        if (s.kind == NegativeKind::file) o << "path = " << s.path.string() << "\n";
    }

    for (const auto& a : c.attacks) {
        o << "\n[attack." << a.name << "]\n"
          << "method = " << to_string(a.method) << "\n"
          << "epsilon = " << num(a.config.epsilon) << "\n"
          << "alpha = " << num(a.config.alpha) << "\n"
          << "steps = " << a.config.steps << "\n"
          << "clip_min = " << num(a.config.clip_min) << "\n"
          << "clip_max = " << num(a.config.clip_max) << "\n"
          << "limit = " << a.limit << "\n";
    }

    const auto& ca = c.classifier_arch;
    const auto& ct = c.classifier_train;
    o << "\n[classifier]\n"
      << "hidden = " << list(ca.hidden) << "\n"
      << "activation = " << to_string(ca.activation) << "\n"
      << "epochs = " << ct.epochs << "\n"
      << "batch_size = " << ct.batch_size << "\n"
      << "step_size = " << num(ct.step_size) << "\n"
      << "conv = " << boolean(ca.conv.has_value()) << "\n";
    if (ca.conv) {
        o << "conv_height = " << ca.conv->height << "\n"
          << "conv_width = " << ca.conv->width << "\n"
          << "conv_channels = " << ca.conv->channels << "\n"
          << "conv_filters = " << ca.conv->filters << "\n"
          << "conv_kernel = " << ca.conv->kernel << "\n";
    }
    if (!c.classifier_checkpoint.empty()) o << "checkpoint = " << c.classifier_checkpoint.string() << "\n";

    const auto& va = c.verifier_arch;
    const auto& vt = c.verifier_train;
    o << "\n[verifier]\n"
      << "latent_dim = " << va.latent_dim << "\n"
      << "encoder_hidden = " << list(va.encoder_hidden) << "\n"
      << "decoder_hidden = " << list(va.decoder_hidden) << "\n"
      << "critic_hidden = " << list(va.critic_hidden) << "\n"
      << "prior_hidden = " << list(va.prior_hidden) << "\n"
      << "activation = " << to_string(va.activation) << "\n"
      << "conditioning = " << to_string(va.conditioning) << "\n"
      << "input_scale = " << num(va.input_scale) << "\n"
      << "lambda = " << num(vt.lambda) << "\n"
      << "epochs = " << vt.epochs << "\n"
      << "batch_size = " << vt.batch_size << "\n"
      << "model_step = " << num(vt.model_step) << "\n"
      << "critic_step = " << num(vt.critic_step) << "\n"
      << "prior_step = " << num(vt.prior_step) << "\n"
      << "k_critic_steps = " << vt.k_critic_steps << "\n"
      << "dz_finetune_epochs = " << vt.dz_finetune_epochs << "\n";
    if (!c.verifier_checkpoint.empty()) o << "checkpoint = " << c.verifier_checkpoint.string() << "\n";

    o << "\n[ablation]\n"
      << "disable_mi = " << boolean(c.ablation.disable_mi) << "\n"
      << "disable_prior_correction = " << boolean(c.ablation.disable_prior_correction) << "\n"
      << "encoder_cond_y = " << boolean(c.ablation.encoder_cond_y) << "\n";
    return o.str();
}

std::string config_hash(const ExperimentConfig& config) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : to_config_text(config)) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

VerifierArch effective_verifier_arch(const ExperimentConfig& config, int input_dim, int num_classes) {
    VerifierArch a = config.verifier_arch;
    a.input_dim = input_dim;
    a.num_classes = num_classes;
    a.lambda = config.ablation.disable_mi ? 0.0 : config.verifier_train.lambda;
    if (config.ablation.encoder_cond_y) a.conditioning = EncoderConditioning::x_and_y;
    return a;
}

TrainConfig effective_verifier_train(const ExperimentConfig& config) {
    TrainConfig t = config.verifier_train;
    if (config.ablation.disable_mi) t.lambda = 0.0;
    t.seed = derive_seed(config.seed, 2);
    return t;
}

ClassifierArch effective_classifier_arch(const ExperimentConfig& config, int input_dim, int num_classes) {
    ClassifierArch a = config.classifier_arch;
    a.input_dim = input_dim;
    a.num_classes = num_classes;
    return a;
}

}  // namespace dvn::harness
