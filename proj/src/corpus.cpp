#include "deci/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "deci/numerics.hpp"

namespace deci {

namespace {

const std::vector<std::string>& reserved_tokens() {
    static const std::vector<std::string> tokens = {
        "[PAD]",        "[UNK]",         "[AGE_0_17]", "[AGE_18_44]",
        "[AGE_45_64]", "[AGE_65_PLUS]", "[GENDER_M]", "[GENDER_F]"};
    return tokens;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string padded_number(std::size_t n, int width) {
    std::string s = std::to_string(n);
    if (static_cast<int>(s.size()) < width) s.insert(0, width - s.size(), '0');
    return s;
}

int digits_for(std::size_t n) {
    int d = 1;
    while (n >= 10) {
        n /= 10;
        ++d;
    }
    return d;
}

}  // namespace

std::string_view to_string(Gender g) { return g == Gender::M ? "M" : "F"; }

Gender parse_gender(std::string_view s) {
    if (s == "M") return Gender::M;
    if (s == "F") return Gender::F;
    throw ParseError("gender must be \"M\" or \"F\", got \"" + std::string(s) + "\"");
}

LabelSpace::LabelSpace(std::vector<std::string> labels) : labels_(std::move(labels)) {
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (labels_[i].empty()) throw ValidationError("label space contains an empty label");
        if (!index_.emplace(labels_[i], i).second) {
            throw ValidationError("duplicate label in label space: " + labels_[i]);
        }
    }
}

std::size_t LabelSpace::index_of(const std::string& code) const {
    auto it = index_.find(code);
    if (it == index_.end()) throw ValidationError("unknown code: " + code);
    return it->second;
}

std::vector<double> LabelSpace::multi_hot(const Document& doc) const {
    std::vector<double> y(labels_.size(), 0.0);
    for (const auto& c : doc.codes) y[index_of(c)] = 1.0;
    return y;
}

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::string current;
    for (char ch : text) {
        auto uc = static_cast<unsigned char>(ch);
        // Non-ASCII bytes are kept so UTF-8 words survive intact.
        if (std::isalnum(uc) || uc >= 0x80) {
            current.push_back(static_cast<char>(std::tolower(uc)));
        } else if (!current.empty()) {
            words.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) words.push_back(std::move(current));
    return words;
}

Vocabulary::Vocabulary() : tokens_(reserved_tokens()) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) ids_.emplace(tokens_[i], static_cast<TokenId>(i));
}

Vocabulary Vocabulary::build(const Corpus& docs) {
    std::set<std::string> words;
    for (const auto& d : docs) {
        for (auto& w : split_words(d.text)) words.insert(std::move(w));
    }
    std::vector<std::string> tokens = reserved_tokens();
    tokens.insert(tokens.end(), words.begin(), words.end());
    return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    const auto& res = reserved_tokens();
    if (tokens.size() < res.size() || !std::equal(res.begin(), res.end(), tokens.begin())) {
        throw ValidationError("vocabulary does not start with the reserved tokens");
    }
    Vocabulary v;
    v.tokens_ = std::move(tokens);
    v.ids_.clear();
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
        if (!v.ids_.emplace(v.tokens_[i], static_cast<TokenId>(i)).second) {
            throw ValidationError("duplicate vocabulary token: " + v.tokens_[i]);
        }
    }
    return v;
}

TokenId Vocabulary::id(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    return it == ids_.end() ? reserved::kUnk : it->second;
}

std::vector<TokenId> Vocabulary::tokenize(std::string_view text) const {
    std::vector<TokenId> ids;
    for (const auto& w : split_words(text)) ids.push_back(id(w));
    return ids;
}

std::vector<TokenId> demographic_tokens(int age, Gender gender) {
    if (age < 0 || age >= kMaxAge) throw ValidationError("age out of range: " + std::to_string(age));
    TokenId bucket = age < 18   ? reserved::kAge0To17
                     : age < 45 ? reserved::kAge18To44
                     : age < 65 ? reserved::kAge45To64
                                : reserved::kAge65Plus;
    return {bucket, gender == Gender::M ? reserved::kGenderM : reserved::kGenderF};
}

std::vector<TokenId> build_model_input(const Vocabulary& vocab, const Document& doc,
                                       InputMode mode, std::size_t max_len) {
    if (max_len < 2) throw ConfigError("max_len must leave room for the demographic tokens");
    std::vector<TokenId> ids = demographic_tokens(doc.age, doc.gender);
    ids.reserve(max_len);
    if (mode == InputMode::Full) {
        for (TokenId t : vocab.tokenize(doc.text)) {
            if (ids.size() == max_len) break;
            ids.push_back(t);
        }
    }
    ids.resize(max_len, reserved::kPad);
    return ids;
}

void SyntheticConfig::validate() const {
    auto prob = [](double p, const char* name) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ConfigError(std::string(name) + " must lie in [0, 1], got " + std::to_string(p));
        }
    };
    prob(p_conf_train, "p_conf_train");
    prob(p_conf_test, "p_conf_test");
    prob(noise_rate, "noise_rate");
    if (n_labels == 0) throw ConfigError("n_labels must be positive");
    if (confounded_label >= n_labels) throw ConfigError("confounded_label must be < n_labels");
    if (keywords_per_label == 0) throw ConfigError("keywords_per_label must be positive");
    if (vocab_size <= n_labels * keywords_per_label) {
        throw ConfigError("vocab_size " + std::to_string(vocab_size) +
                          " cannot hold " + std::to_string(n_labels * keywords_per_label) +
                          " keywords plus filler words");
    }
    if (doc_len < 8) throw ConfigError("doc_len must be at least 8");
    if (confound_min_age <= 0 || confound_min_age >= 96) {
        throw ConfigError("confound_min_age must lie in [1, 95]");
    }
}

namespace {

constexpr std::size_t kMaxCodesPerDoc = 4;
constexpr std::size_t kMaxKeywordsPerCode = 2;
constexpr int kOldestAge = 95;

Document sample_document(const SyntheticConfig& cfg, const SyntheticCorpus& out,
                         const std::vector<std::string>& filler, double p_conf, Rng& rng,
                         std::string id) {
    Document doc;
    doc.id = std::move(id);

    const std::size_t n_codes = 1 + rng.uniform_index(std::min(kMaxCodesPerDoc, cfg.n_labels));
    std::vector<std::size_t> order(cfg.n_labels);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = 0; i < n_codes; ++i) {
        std::size_t j = i + rng.uniform_index(order.size() - i);
        std::swap(order[i], order[j]);
    }
    std::vector<std::size_t> gold(order.begin(), order.begin() + n_codes);
    std::sort(gold.begin(), gold.end());
    for (auto g : gold) doc.codes.push_back(out.labels.label(g));

    const bool has_confound =
        std::find(gold.begin(), gold.end(), cfg.confounded_label) != gold.end();
    const bool attribute = rng.bernoulli(has_confound ? p_conf : 0.5);
    doc.age = attribute
                  ? cfg.confound_min_age +
                        static_cast<int>(rng.uniform_index(kOldestAge - cfg.confound_min_age + 1))
                  : static_cast<int>(rng.uniform_index(static_cast<std::size_t>(cfg.confound_min_age)));
    doc.gender = rng.bernoulli(0.5) ? Gender::F : Gender::M;

    std::vector<std::string> words;
    words.reserve(cfg.doc_len);
    for (auto g : gold) {
        const auto& kw = out.keywords[g];
        const std::size_t n = 1 + rng.uniform_index(kMaxKeywordsPerCode);
        for (std::size_t k = 0; k < n; ++k) words.push_back(kw[rng.uniform_index(kw.size())]);
    }
    while (words.size() < cfg.doc_len) {
        if (cfg.n_labels > gold.size() && rng.bernoulli(cfg.noise_rate)) {
            // Spurious mention of a label the document does not carry.
            std::size_t other;
            do {
                other = rng.uniform_index(cfg.n_labels);
            } while (std::binary_search(gold.begin(), gold.end(), other));
            const auto& kw = out.keywords[other];
            words.push_back(kw[rng.uniform_index(kw.size())]);
        } else {
            words.push_back(filler[rng.uniform_index(filler.size())]);
        }
    }
    rng.shuffle(words);

    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) doc.text.push_back(' ');
        doc.text += words[i];
    }
    return doc;
}

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    SyntheticCorpus out;

    const int label_width = std::max(2, digits_for(cfg.n_labels - 1));
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < cfg.n_labels; ++i) labels.push_back("C" + padded_number(i, label_width));
    out.labels = LabelSpace(std::move(labels));

    const int word_width = std::max(4, digits_for(cfg.vocab_size - 1));
    std::vector<std::string> words;
    for (std::size_t i = 0; i < cfg.vocab_size; ++i) words.push_back("w" + padded_number(i, word_width));

    Rng rng(cfg.seed);
    rng.shuffle(words);
    out.keywords.resize(cfg.n_labels);
    std::size_t next = 0;
    for (auto& kw : out.keywords) {
        for (std::size_t k = 0; k < cfg.keywords_per_label; ++k) kw.push_back(words[next++]);
    }
    const std::vector<std::string> filler(words.begin() + static_cast<std::ptrdiff_t>(next), words.end());

    auto make_split = [&](std::size_t n, double p_conf, const std::string& prefix) {
        Corpus docs;
        docs.reserve(n);
        const int width = std::max(5, digits_for(n));
        for (std::size_t i = 0; i < n; ++i) {
            docs.push_back(sample_document(cfg, out, filler, p_conf, rng,
                                           prefix + "-" + padded_number(i, width)));
        }
        return docs;
    };
    // Dev mirrors the training distribution; only test is shifted.
    out.train = make_split(cfg.n_train, cfg.p_conf_train, "train");
    out.dev = make_split(cfg.n_dev, cfg.p_conf_train, "dev");
    out.test = make_split(cfg.n_test, cfg.p_conf_test, "test");
    return out;
}

Corpus parse_jsonl(std::string_view content, const JsonlOptions& opts) {
    using nlohmann::json;
    Corpus docs;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < content.size()) {
        std::size_t end = content.find('\n', pos);
        if (end == std::string_view::npos) end = content.size();
        std::string_view line = content.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

        auto fail = [&](const std::string& what) -> ParseError {
            return ParseError("line " + std::to_string(line_no) + ": " + what);
        };
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw fail(std::string("malformed JSON: ") + e.what());
        }
        if (!j.is_object()) throw fail("record is not an object");
        for (const char* field : {"id", "text", "age", "gender", "codes"}) {
            if (!j.contains(field) && (opts.require_codes || std::string_view(field) != "codes")) {
                throw fail(std::string("missing field \"") + field + "\"");
            }
        }
        Document d;
        try {
            d.id = j.at("id").get<std::string>();
            d.text = j.at("text").get<std::string>();
            if (!j.at("age").is_number_integer()) throw fail("age must be an integer");
            d.age = j.at("age").get<int>();
            d.gender = parse_gender(j.at("gender").get<std::string>());
            if (j.contains("codes")) {
                if (!j.at("codes").is_array()) throw fail("codes must be an array");
                d.codes = j.at("codes").get<std::vector<std::string>>();
            }
        } catch (const json::exception& e) {
            throw fail(std::string("bad field type: ") + e.what());
        } catch (const ParseError& e) {
            if (std::string_view(e.what()).starts_with("line ")) throw;
            throw fail(e.what());
        }
        if (d.age < 0 || d.age >= kMaxAge) throw fail("age out of range: " + std::to_string(d.age));
        if (opts.labels != nullptr) {
            for (const auto& c : d.codes) {
                if (!opts.labels->contains(c)) {
                    throw ValidationError("line " + std::to_string(line_no) + ": unknown code: " + c);
                }
            }
        }
        docs.push_back(std::move(d));
    }
    return docs;
}

std::string to_jsonl(const Corpus& docs) {
    std::string out;
    for (const auto& d : docs) {
        nlohmann::ordered_json j;
        j["id"] = d.id;
        j["text"] = d.text;
        j["age"] = d.age;
        j["gender"] = std::string(to_string(d.gender));
        j["codes"] = d.codes;
        out += j.dump();
        out.push_back('\n');
    }
    return out;
}

Corpus load_jsonl(const std::filesystem::path& path, const JsonlOptions& opts) {
    return parse_jsonl(read_file(path), opts);
}

void save_jsonl(const std::filesystem::path& path, const Corpus& docs) {
    write_file(path, to_jsonl(docs));
}

LabelSpace load_label_file(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    std::vector<std::string> labels;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        labels.push_back(line);
    }
    return LabelSpace(std::move(labels));
}

void save_label_file(const std::filesystem::path& path, const LabelSpace& labels) {
    std::string content;
    for (const auto& l : labels.labels()) content += l + "\n";
    write_file(path, content);
}

}  // namespace deci
