#pragma once
// Document/label data model, tokenization, demographic token serialization,
// JSONL dataset I/O and the synthetic confounded-corpus generator.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace deci {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

enum class Gender { M, F };

std::string_view to_string(Gender g);
Gender parse_gender(std::string_view s);

inline constexpr int kMaxAge = 130;

struct Document {
    std::string id;
    std::string text;
    int age = 0;
    Gender gender = Gender::M;
    std::vector<std::string> codes;

    bool operator==(const Document&) const = default;
};

using Corpus = std::vector<Document>;

class LabelSpace {
public:
    LabelSpace() = default;
    explicit LabelSpace(std::vector<std::string> labels);

    std::size_t size() const noexcept { return labels_.size(); }
    const std::vector<std::string>& labels() const noexcept { return labels_; }
    const std::string& label(std::size_t i) const { return labels_.at(i); }

    // Throws ValidationError naming the code when it is not in the space.
    std::size_t index_of(const std::string& code) const;
    bool contains(const std::string& code) const { return index_.count(code) != 0; }

    // Multi-hot gold vector for a document.
    std::vector<double> multi_hot(const Document& doc) const;

    bool operator==(const LabelSpace& o) const { return labels_ == o.labels_; }

private:
    std::vector<std::string> labels_;
    std::unordered_map<std::string, std::size_t> index_;
};

using TokenId = std::int32_t;

// Fixed reserved layout: PAD, UNK, then the four age buckets and two genders.
namespace reserved {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kAge0To17 = 2;
inline constexpr TokenId kAge18To44 = 3;
inline constexpr TokenId kAge45To64 = 4;
inline constexpr TokenId kAge65Plus = 5;
inline constexpr TokenId kGenderM = 6;
inline constexpr TokenId kGenderF = 7;
inline constexpr std::size_t kCount = 8;
}  // namespace reserved

// Lowercased words split on anything that is not alphanumeric.
std::vector<std::string> split_words(std::string_view text);

class Vocabulary {
public:
    // Reserved tokens only.
    Vocabulary();

    // Reserved tokens followed by every word seen in the corpus, sorted.
    static Vocabulary build(const Corpus& docs);
    // Restores an id->token table; the reserved prefix must match exactly.
    static Vocabulary from_tokens(std::vector<std::string> tokens);

    std::size_t size() const noexcept { return tokens_.size(); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }
    const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    TokenId id(std::string_view token) const;  // UNK when absent

    // Unpadded ids of the note text.
    std::vector<TokenId> tokenize(std::string_view text) const;

    bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> ids_;
};

// The demographic prefix t_D: one age-bucket token then one gender token.
std::vector<TokenId> demographic_tokens(int age, Gender gender);

enum class InputMode { Full, DemographicOnly };

inline constexpr std::size_t kDefaultMaxLen = 256;

// Full: t_D followed by the tokenized note, truncated and PAD-filled to
// max_len. DemographicOnly: t_D followed by PAD.
std::vector<TokenId> build_model_input(const Vocabulary& vocab, const Document& doc,
                                       InputMode mode, std::size_t max_len = kDefaultMaxLen);

struct SyntheticConfig {
    std::size_t n_labels = 20;
    std::size_t vocab_size = 1000;
    std::size_t n_train = 2000;
    std::size_t n_dev = 500;
    std::size_t n_test = 500;
    std::size_t doc_len = 64;
    std::size_t keywords_per_label = 5;
    std::size_t confounded_label = 0;
    // Confound attribute: age >= confound_min_age.
    int confound_min_age = 65;
    double p_conf_train = 0.9;
    double p_conf_test = 0.5;
    double noise_rate = 0.05;
    std::uint64_t seed = 1;

    // Throws ConfigError.
    void validate() const;
    bool attribute_holds(const Document& doc) const { return doc.age >= confound_min_age; }
};

struct SyntheticCorpus {
    LabelSpace labels;
    Corpus train;
    Corpus dev;
    Corpus test;
    // Keyword tokens owned by each label, indexed like labels.
    std::vector<std::vector<std::string>> keywords;
};

SyntheticCorpus generate_synthetic(const SyntheticConfig& cfg);

struct JsonlOptions {
    // When set, every code is validated against it.
    const LabelSpace* labels = nullptr;
    // Prediction input may omit "codes".
    bool require_codes = true;
};

Corpus load_jsonl(const std::filesystem::path& path, const JsonlOptions& opts = {});
void save_jsonl(const std::filesystem::path& path, const Corpus& docs);
Corpus parse_jsonl(std::string_view content, const JsonlOptions& opts = {});
std::string to_jsonl(const Corpus& docs);

LabelSpace load_label_file(const std::filesystem::path& path);
void save_label_file(const std::filesystem::path& path, const LabelSpace& labels);

}  // namespace deci
