#include "dstlab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dstlab/errors.hpp"
#include "dstlab/rng.hpp"

namespace dstlab {

void NoiseSpec::validate() const {
    auto in01 = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!in01(p_missing) || !in01(p_spurious) || !in01(p_wrong)) {
        throw ConfigError("NoiseSpec: probabilities must lie in [0,1]");
    }
    if (p_missing + p_wrong > 1.0) {
        throw ConfigError("NoiseSpec: p_missing + p_wrong must not exceed 1 (kinds are disjoint)");
    }
}

const char* noise_kind_name(NoiseKind k) {
    switch (k) {
        case NoiseKind::Missing: return "missing";
        case NoiseKind::Spurious: return "spurious";
        case NoiseKind::Wrong: return "wrong";
        case NoiseKind::Carried: return "carried";
    }
    return "?";
}

NoiseKind noise_kind_from_name(std::string_view name) {
    if (name == "missing") return NoiseKind::Missing;
    if (name == "spurious") return NoiseKind::Spurious;
    if (name == "wrong") return NoiseKind::Wrong;
    if (name == "carried") return NoiseKind::Carried;
    throw SchemaError("unknown noise kind: " + std::string(name));
}

std::string NoiseLog::to_jsonl() const {
    std::string out;
    for (const auto& e : entries) {
        nlohmann::ordered_json j;
        j["dialogue"] = e.dialogue_id;
        j["turn"] = e.turn;
        j["slot"] = e.slot;
        j["kind"] = noise_kind_name(e.kind);
        j["original"] = e.original_value;
        j["corrupted"] = e.corrupted_value;
        out += j.dump();
        out.push_back('\n');
    }
    return out;
}

NoiseLog NoiseLog::from_jsonl(const std::string& text) {
    NoiseLog log;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        NoiseLogEntry e;
        e.dialogue_id = j.at("dialogue").get<std::string>();
        e.turn = j.at("turn").get<int>();
        e.slot = j.at("slot").get<int>();
        e.kind = noise_kind_from_name(j.at("kind").get<std::string>());
        e.original_value = j.at("original").get<int>();
        e.corrupted_value = j.at("corrupted").get<int>();
        log.entries.push_back(std::move(e));
    }
    return log;
}

namespace {

std::vector<std::string> times(int count) {
    std::vector<std::string> out;
    int hour = 9, minute = 0;
    for (int i = 0; i < count; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%02d:%02d", hour, minute);
        out.emplace_back(buf);
        minute += 30;
        if (minute == 60) {
            minute = 0;
            ++hour;
        }
    }
    return out;
}

std::vector<std::string> two_word_names(const std::vector<std::string>& adjectives,
                                        const std::vector<std::string>& nouns) {
    std::vector<std::string> out;
    for (const auto& a : adjectives) {
        for (const auto& n : nouns) out.push_back(a + " " + n);
    }
    return out;
}

std::vector<std::string> with_specials(std::vector<std::string> vals) {
    std::vector<std::string> out{kNoneValue, kDontcareValue};
    out.insert(out.end(), vals.begin(), vals.end());
    return out;
}

}  // namespace

Ontology desk_ontology() {
    // candidate lists stay short (5-9 entries) so a small clean set still
    // sees every value string several times
    const std::vector<std::string> areas = {"north", "south", "east", "west", "centre"};
    const std::vector<std::string> days = {"monday", "tuesday", "friday", "saturday", "sunday"};
    const std::vector<std::string> people = {"1", "2", "3", "4"};
    const std::vector<std::string> prices = {"cheap", "moderate", "expensive"};
    const std::vector<std::string> places = {"cambridge", "london", "norwich", "ely", "stansted",
                                             "kings lynn"};
    const std::vector<std::string> adjectives = {"old", "royal", "golden"};
    const std::vector<std::string> clock = times(6);

    std::map<std::string, std::vector<std::string>> c;
    c["attraction-area"] = with_specials(areas);
    c["attraction-day"] = with_specials(days);
    c["attraction-fee"] = with_specials({"free", "cheap", "expensive"});
    c["attraction-name"] = with_specials(two_word_names(adjectives, {"castle", "gardens"}));
    c["attraction-people"] = with_specials(people);
    c["attraction-type"] = with_specials({"museum", "park", "cinema", "theatre", "zoo"});
    c["hotel-area"] = with_specials(areas);
    c["hotel-name"] = with_specials(two_word_names(adjectives, {"lodge", "house"}));
    c["hotel-parking"] = with_specials({"yes", "no", "free"});
    c["hotel-pricerange"] = with_specials(prices);
    c["hotel-stars"] = with_specials({"1", "2", "3", "4", "5"});
    c["hotel-type"] = with_specials({"hotel", "guesthouse", "hostel", "resort", "inn"});
    c["restaurant-area"] = with_specials(areas);
    c["restaurant-day"] = with_specials(days);
    c["restaurant-food"] = with_specials({"italian", "chinese", "indian", "british", "french",
                                          "thai"});
    c["restaurant-name"] = with_specials(two_word_names(adjectives, {"kitchen", "table"}));
    c["restaurant-pricerange"] = with_specials(prices);
    c["restaurant-time"] = with_specials(clock);
    c["taxi-arriveby"] = with_specials(clock);
    c["taxi-departure"] = with_specials(places);
    c["taxi-destination"] = with_specials(places);
    c["taxi-leaveat"] = with_specials(clock);
    c["taxi-people"] = with_specials(people);
    c["taxi-type"] = with_specials({"standard", "executive", "luxury"});
    c["train-arriveby"] = with_specials(clock);
    c["train-day"] = with_specials(days);
    c["train-departure"] = with_specials(places);
    c["train-destination"] = with_specials(places);
    c["train-leaveat"] = with_specials(clock);
    c["train-people"] = with_specials(people);

    std::vector<std::string> slots;
    for (const auto& [slot, vals] : c) slots.push_back(slot);  // lexicographic
    return Ontology(std::move(slots), std::move(c));
}

namespace {

const std::vector<std::string>& template_word_list() {
    static const std::vector<std::string> words = {
        "hello", "how",  "can",   "i",    "help",  "you",        "welcome", "what",
        "do",    "for",  "okay",  "noted", "sure",  "thing",      "got",     "it",
        "anything", "else", "alright", "any", "preference", "on", "want", "the",
        "should", "be",  "please", "find", "a",    "with",       "make",    "thank",
        "thanks"};
    return words;
}

void append_words(Tokens& out, std::initializer_list<const char*> words) {
    for (const char* w : words) out.emplace_back(w);
}

// One user fragment verbalizing (slot, value). Users name the slot by its
// schema id, so turn text and serialized states share one surface form; a few
// shapes drop the slot id and keep only the value, which the tracker must
// resolve from context.
Tokens update_fragment(const Ontology& ont, int slot, int value, Rng& rng) {
    const std::string& slot_id = ont.slot_name(slot);
    Tokens value_tokens = tokenize(ont.value_name(slot, value));
    Tokens out;
    double u = rng.uniform();
    if (u < 0.35) {
        out.push_back(slot_id);
        out.insert(out.end(), value_tokens.begin(), value_tokens.end());
    } else if (u < 0.60) {
        append_words(out, {"i", "want"});
        out.push_back(slot_id);
        out.insert(out.end(), value_tokens.begin(), value_tokens.end());
    } else if (u < 0.80) {
        out.push_back(slot_id);
        append_words(out, {"should", "be"});
        out.insert(out.end(), value_tokens.begin(), value_tokens.end());
    } else if (u < 0.92) {
        append_words(out, {"please", "make"});
        out.push_back(slot_id);
        out.insert(out.end(), value_tokens.begin(), value_tokens.end());
    } else {
        // value only; the slot must be inferred from the value vocabulary and
        // the dialogue's active domains
        append_words(out, {"make", "it"});
        out.insert(out.end(), value_tokens.begin(), value_tokens.end());
    }
    return out;
}

Tokens system_utterance(const Ontology& ont, const std::vector<int>& dialogue_slots, bool first,
                        Rng& rng) {
    Tokens out;
    if (first) {
        if (rng.uniform() < 0.5) {
            append_words(out, {"hello", "how", "can", "i", "help", "you"});
        } else {
            append_words(out, {"welcome", "what", "can", "i", "do", "for", "you"});
        }
        return out;
    }
    double u = rng.uniform();
    if (u < 0.3) {
        append_words(out, {"okay", "noted"});
    } else if (u < 0.55) {
        append_words(out, {"sure", "thing"});
    } else if (u < 0.8) {
        append_words(out, {"got", "it", "anything", "else"});
    } else {
        int s = dialogue_slots[rng.uniform_int(static_cast<int>(dialogue_slots.size()))];
        append_words(out, {"any", "preference", "on"});
        out.push_back(ont.slot_name(s));
    }
    return out;
}

}  // namespace

const std::vector<std::string>& generator_template_words() { return template_word_list(); }

Corpus generate_corpus(const Ontology& ont, int n_dialogues, int max_turns, std::uint64_t seed) {
    if (ont.n_slots() == 0) throw ConfigError("generate_corpus: empty ontology");
    if (ont.domains().size() < 2) {
        throw ConfigError("generate_corpus: need at least 2 domains for multi-domain dialogues");
    }
    if (n_dialogues < 0) throw ConfigError("generate_corpus: negative dialogue count");
    if (max_turns < 1) throw ConfigError("generate_corpus: max_turns must be >= 1");

    std::vector<std::string> domains = ont.domains();
    Corpus corpus;
    corpus.ontology = ont;
    corpus.dialogues.reserve(static_cast<std::size_t>(n_dialogues));

    for (int di = 0; di < n_dialogues; ++di) {
        char idbuf[16];
        std::snprintf(idbuf, sizeof(idbuf), "d%05d", di);
        Dialogue dlg;
        dlg.id = idbuf;
        Rng rng = Rng::derive(seed, "dialogue/" + dlg.id);

        int n_turns = 1 + rng.uniform_int(max_turns);
        int n_dom = 1 + rng.uniform_int(std::min<int>(3, static_cast<int>(domains.size())));
        std::vector<std::string> dom_pool = domains;
        rng.shuffle(dom_pool);
        dom_pool.resize(static_cast<std::size_t>(n_dom));

        std::vector<int> dialogue_slots;
        for (int s = 0; s < ont.n_slots(); ++s) {
            std::string d = Ontology::domain_of(ont.slot_name(s));
            if (std::find(dom_pool.begin(), dom_pool.end(), d) != dom_pool.end()) {
                dialogue_slots.push_back(s);
            }
        }

        State state = all_none_state(ont);
        for (int t = 0; t < n_turns; ++t) {
            Turn turn;
            turn.system_utterance = system_utterance(ont, dialogue_slots, t == 0, rng);

            int n_updates;
            if (t > 0 && rng.uniform() < 0.10) {
                n_updates = 0;  // courtesy turn, no state change
            } else {
                double u = rng.uniform();
                n_updates = u < 0.50 ? 1 : (u < 0.85 ? 2 : 3);
            }

            std::vector<int> pool = dialogue_slots;
            rng.shuffle(pool);
            Tokens user;
            int made = 0;
            for (int s : pool) {
                if (made >= n_updates) break;
                int k = ont.n_candidates(s);
                // pick a new non-"none" value different from the current one
                std::vector<int> choices;
                choices.reserve(static_cast<std::size_t>(k));
                for (int v = 1; v < k; ++v) {
                    if (v != state[s]) choices.push_back(v);
                }
                if (choices.empty()) continue;
                int v = choices[rng.uniform_int(static_cast<int>(choices.size()))];
                Tokens frag = update_fragment(ont, s, v, rng);
                user.insert(user.end(), frag.begin(), frag.end());
                state[s] = v;
                ++made;
            }
            if (made == 0) append_words(user, {"thank", "you"});

            turn.user_utterance = std::move(user);
            turn.state = state;
            dlg.turns.push_back(std::move(turn));
        }
        corpus.dialogues.push_back(std::move(dlg));
    }
    return corpus;
}

std::pair<Corpus, NoiseLog> inject_noise(const Corpus& corpus, const NoiseSpec& spec) {
    spec.validate();
    validate_corpus(corpus);
    const Ontology& ont = corpus.ontology;

    Corpus noisy = corpus;
    NoiseLog log;

    for (auto& dlg : noisy.dialogues) {
        Rng rng = Rng::derive(spec.seed, "noise/" + dlg.id);
        const Dialogue* clean_dlg = corpus.find(dlg.id);
        State prev_clean = all_none_state(ont);
        State prev_noisy = all_none_state(ont);

        for (int t = 0; t < static_cast<int>(dlg.turns.size()); ++t) {
            const State& clean = clean_dlg->turns[t].state;
            State out = all_none_state(ont);

            for (int s = 0; s < ont.n_slots(); ++s) {
                bool active = clean[s] != prev_clean[s];
                if (active) {
                    double u = rng.uniform();
                    if (u < spec.p_missing) {
                        out[s] = prev_noisy[s];
                        if (out[s] != clean[s]) {
                            log.entries.push_back({dlg.id, t, s, NoiseKind::Missing, clean[s], out[s]});
                        }
                    } else if (u < spec.p_missing + spec.p_wrong) {
                        std::vector<int> choices;
                        for (int v = 1; v < ont.n_candidates(s); ++v) {
                            if (v != clean[s]) choices.push_back(v);
                        }
                        if (choices.empty()) {
                            out[s] = clean[s];
                        } else {
                            out[s] = choices[rng.uniform_int(static_cast<int>(choices.size()))];
                            log.entries.push_back({dlg.id, t, s, NoiseKind::Wrong, clean[s], out[s]});
                        }
                    } else {
                        out[s] = clean[s];
                    }
                } else {
                    out[s] = prev_noisy[s];
                    if (out[s] != clean[s]) {
                        log.entries.push_back({dlg.id, t, s, NoiseKind::Carried, clean[s], out[s]});
                    }
                }
            }

            if (rng.uniform() < spec.p_spurious) {
                std::vector<int> eligible;
                for (int s = 0; s < ont.n_slots(); ++s) {
                    if (clean[s] == kNoneIndex && prev_clean[s] == kNoneIndex &&
                        out[s] == kNoneIndex) {
                        eligible.push_back(s);
                    }
                }
                if (!eligible.empty()) {
                    int s = eligible[rng.uniform_int(static_cast<int>(eligible.size()))];
                    int k = ont.n_candidates(s);
                    int v = 1 + rng.uniform_int(k - 1);  // any non-"none" value
                    out[s] = v;
                    log.entries.push_back({dlg.id, t, s, NoiseKind::Spurious, clean[s], v});
                }
            }

            dlg.turns[t].state = out;
            prev_clean = clean;
            prev_noisy = std::move(out);
        }
    }
    return {std::move(noisy), std::move(log)};
}

CorpusSplit split_corpus(const Corpus& corpus, const SplitFractions& f, std::uint64_t seed) {
    if (f.train < 0.0 || f.clean < 0.0 || f.test < 0.0) {
        throw ConfigError("split_corpus: fractions must be non-negative");
    }
    if (f.train + f.clean + f.test > 1.0 + 1e-12) {
        throw ConfigError("split_corpus: fractions must sum to at most 1");
    }
    int n = static_cast<int>(corpus.dialogues.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng rng = Rng::derive(seed, "split");
    rng.shuffle(order);

    auto take = [&](double frac, int available) {
        int want = static_cast<int>(std::llround(frac * n));
        return std::min(want, available);
    };
    int n_train = take(f.train, n);
    int n_clean = take(f.clean, n - n_train);
    int n_test = take(f.test, n - n_train - n_clean);
    if (f.clean > 0.0 && n_clean == 0) {
        throw ConfigError("split_corpus: requested clean partition is empty");
    }

    auto build = [&](int begin, int count) {
        std::vector<int> idx(order.begin() + begin, order.begin() + begin + count);
        std::sort(idx.begin(), idx.end());  // keep original corpus order within each part
        Corpus part;
        part.ontology = corpus.ontology;
        part.dialogues.reserve(static_cast<std::size_t>(count));
        for (int i : idx) part.dialogues.push_back(corpus.dialogues[static_cast<std::size_t>(i)]);
        return part;
    };
    CorpusSplit split;
    split.train = build(0, n_train);
    split.clean = build(n_train, n_clean);
    split.test = build(n_train + n_clean, n_test);
    return split;
}

Corpus filter_by_domain(const Corpus& corpus, std::string_view excluded_domain) {
    const Ontology& ont = corpus.ontology;
    std::vector<int> excluded_slots;
    for (int s = 0; s < ont.n_slots(); ++s) {
        if (Ontology::domain_of(ont.slot_name(s)) == excluded_domain) excluded_slots.push_back(s);
    }
    Corpus out;
    out.ontology = ont;
    for (const auto& d : corpus.dialogues) {
        bool touches = false;
        for (const auto& t : d.turns) {
            for (int s : excluded_slots) {
                if (t.state[s] != kNoneIndex) {
                    touches = true;
                    break;
                }
            }
            if (touches) break;
        }
        if (!touches) out.dialogues.push_back(d);
    }
    return out;
}

}  // namespace dstlab
