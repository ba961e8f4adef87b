#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dstlab/corpus.hpp"
#include "dstlab/dialogue.hpp"
#include "dstlab/errors.hpp"
#include "dstlab/rng.hpp"

using namespace dstlab;

namespace {

Ontology tiny_ontology() {
    return Ontology({"hotel-area", "hotel-stars", "train-day"},
                    {{"hotel-area", {"none", "dontcare", "north", "south"}},
                     {"hotel-stars", {"none", "dontcare", "3", "4", "5"}},
                     {"train-day", {"none", "dontcare", "monday", "friday"}}});
}

Sample one_turn_sample() {
    Sample s;
    s.dialogue_id = "d0";
    s.turn_index = 1;
    s.context = {{tokenize("hi"), tokenize("book hotel")}};
    s.previous_state = {0, 0, 0};
    s.labels = {0, 0, 0};
    return s;
}

}  // namespace

TEST_CASE("ontology validates its invariants") {
    CHECK_NOTHROW(tiny_ontology());
    // "none" must sit at index 0
    CHECK_THROWS_AS(Ontology({"a-x"}, {{"a-x", {"dontcare", "none", "v"}}}), SchemaError);
    // "dontcare" must exist
    CHECK_THROWS_AS(Ontology({"a-x"}, {{"a-x", {"none", "v"}}}), SchemaError);
    // duplicates are rejected
    CHECK_THROWS_AS(Ontology({"a-x"}, {{"a-x", {"none", "dontcare", "v", "v"}}}), SchemaError);
    CHECK_THROWS_AS(Ontology({"a-x", "a-x"}, {{"a-x", {"none", "dontcare"}}}), SchemaError);
}

TEST_CASE("domains derive from slot id prefixes") {
    Ontology ont = tiny_ontology();
    auto domains = ont.domains();
    REQUIRE(domains.size() == 2);
    CHECK(domains[0] == "hotel");
    CHECK(domains[1] == "train");
    CHECK(Ontology::domain_of("restaurant-food") == "restaurant");
}

TEST_CASE("single-turn input sequence: [CLS] [SEP] Z_1 [SEP]") {
    Ontology ont = tiny_ontology();
    Tokens seq = build_input_sequence(one_turn_sample(), ont, 32);
    CHECK(join_tokens(seq) == "[CLS] [SEP] hi book hotel [SEP]");
}

TEST_CASE("previous state serializes between context and first separator") {
    Ontology ont = tiny_ontology();
    Sample s;
    s.dialogue_id = "d1";
    s.turn_index = 2;
    s.context = {{tokenize("hi"), tokenize("i need a hotel")},
                 {tokenize("sure"), tokenize("hotel-stars 4")}};
    s.previous_state = {0, 3, 0};  // hotel-stars -> "4"
    s.labels = {0, 3, 0};
    Tokens seq = build_input_sequence(s, ont, 64);
    // assembled by hand: [CLS] + X_1 + B_1 + [SEP] + Z_2 + [SEP]
    CHECK(join_tokens(seq) == "[CLS] hi i need a hotel hotel-stars 4 [SEP] sure hotel-stars 4 [SEP]");
}

TEST_CASE("max_len equal to the full length leaves the sequence untouched") {
    Ontology ont = tiny_ontology();
    Sample s = one_turn_sample();
    s.context = {{tokenize("hello there friend"), tokenize("i would like to book a hotel")}};
    Tokens full = build_input_sequence(s, ont, 512);
    REQUIRE(static_cast<int>(full.size()) >= 8);
    Tokens same = build_input_sequence(s, ont, static_cast<int>(full.size()));
    CHECK(full == same);
}

TEST_CASE("over-long sequences lose their oldest tokens and keep [CLS] first") {
    Ontology ont = tiny_ontology();
    Sample s = one_turn_sample();
    s.context = {{tokenize("a b c d e f g h i j"), tokenize("k l m n o p")}};
    Tokens full = build_input_sequence(s, ont, 128);
    Tokens cut = build_input_sequence(s, ont, 8);
    CHECK(static_cast<int>(cut.size()) == 8);
    CHECK(cut[0] == kClsToken);
    // the tail is preserved verbatim
    for (int i = 1; i < 8; ++i) CHECK(cut[i] == full[full.size() - 8 + i]);
}

TEST_CASE("build_input_sequence is deterministic and bounded") {
    Ontology ont = desk_ontology();
    Corpus corpus = generate_corpus(ont, 20, 5, 321);
    for (const auto& dlg : corpus.dialogues) {
        for (int t = 0; t < static_cast<int>(dlg.turns.size()); ++t) {
            Sample s;
            s.dialogue_id = dlg.id;
            s.turn_index = t + 1;
            for (int i = 0; i <= t; ++i) {
                s.context.emplace_back(dlg.turns[i].system_utterance, dlg.turns[i].user_utterance);
            }
            s.previous_state = t == 0 ? all_none_state(ont) : dlg.turns[t - 1].state;
            s.labels = dlg.turns[t].state;
            Tokens a = build_input_sequence(s, ont, 48);
            Tokens b = build_input_sequence(s, ont, 48);
            CHECK(a == b);
            CHECK(static_cast<int>(a.size()) <= 48);
            CHECK(a[0] == kClsToken);
        }
    }
}

TEST_CASE("sample validation catches out-of-bounds state indices") {
    Ontology ont = tiny_ontology();
    Sample s = one_turn_sample();
    s.labels = {0, 9, 0};
    CHECK_THROWS_AS(build_input_sequence(s, ont, 32), SchemaError);
    s = one_turn_sample();
    s.previous_state = {-1, 0, 0};
    CHECK_THROWS_AS(build_input_sequence(s, ont, 32), SchemaError);
}

TEST_CASE("one_hot follows the definition and checks bounds") {
    Ontology ont = tiny_ontology();
    CHECK(one_hot(0, 0, ont) == std::vector<double>{1, 0, 0, 0});
    CHECK(one_hot(0, 2, ont) == std::vector<double>{0, 0, 1, 0});
    CHECK_THROWS_AS(one_hot(0, 5, ont), SchemaError);
    CHECK_THROWS_AS(one_hot(7, 0, ont), SchemaError);

    // one-hots always satisfy the soft-label invariants
    SoftLabelSet soft;
    soft.per_slot = {one_hot(0, 1, ont), one_hot(1, 4, ont), one_hot(2, 0, ont)};
    CHECK_NOTHROW(soft.validate(ont));
}

TEST_CASE("soft label sets must be normalized distributions") {
    Ontology ont = tiny_ontology();
    SoftLabelSet soft;
    soft.per_slot = {{0.5, 0.5, 0.0, 0.0}, {1, 0, 0, 0, 0}, {0.9, 0.0, 0.0, 0.2}};
    CHECK_THROWS_AS(soft.validate(ont), SchemaError);
    soft.per_slot[2] = {0.8, 0.0, 0.0, 0.2};
    CHECK_NOTHROW(soft.validate(ont));
    soft.per_slot[0] = {-0.1, 1.1, 0.0, 0.0};
    CHECK_THROWS_AS(soft.validate(ont), SchemaError);
}

TEST_CASE("vocabulary maps unknown tokens to [UNK] and round-trips") {
    Ontology ont = tiny_ontology();
    Vocabulary vocab = Vocabulary::from_ontology(ont, {"hello", "want"});
    CHECK(vocab.id("[CLS]") == Vocabulary::kClsId);
    CHECK(vocab.id("hotel-area") != Vocabulary::kUnkId);
    CHECK(vocab.id("north") != Vocabulary::kUnkId);
    CHECK(vocab.id("zebra") == Vocabulary::kUnkId);
    Vocabulary back = Vocabulary::from_json(vocab.to_json());
    CHECK(back.size() == vocab.size());
    CHECK(back.content_hash() == vocab.content_hash());
    CHECK(back.id("hotel-area") == vocab.id("hotel-area"));
}

TEST_CASE("corpus json round-trips states and omits none-valued slots") {
    Ontology ont = tiny_ontology();
    Corpus corpus;
    corpus.ontology = ont;
    Dialogue d;
    d.id = "d42";
    Turn t1;
    t1.system_utterance = tokenize("hello");
    t1.user_utterance = tokenize("hotel-area north");
    t1.state = {2, 0, 0};
    d.turns.push_back(t1);
    Turn t2;
    t2.system_utterance = tokenize("okay");
    t2.user_utterance = tokenize("train-day friday");
    t2.state = {2, 0, 3};
    d.turns.push_back(t2);
    corpus.dialogues.push_back(d);

    std::string text = corpus_to_json(corpus);
    // none-valued slots are omitted from the serialized states
    bool none_serialized = text.find("\"hotel-stars\": \"none\"") != std::string::npos;
    CHECK(!none_serialized);
    Corpus back = corpus_from_json(text);
    REQUIRE(back.dialogues.size() == 1);
    CHECK(back.ontology.content_hash() == ont.content_hash());
    CHECK(back.dialogues[0].turns[0].state == t1.state);
    CHECK(back.dialogues[0].turns[1].state == t2.state);
    // byte-stable second round trip
    CHECK(corpus_to_json(back) == text);
}

TEST_CASE("corpus loader normalizes ontologies missing the special values") {
    std::string text = R"({"ontology": {"hotel-area": ["north", "south"]},
                           "dialogues": [{"id": "x", "turns": [{"system": "hi", "user": "hotel-area north",
                           "state": {"hotel-area": "north"}}]}]})";
    Corpus corpus = corpus_from_json(text);
    CHECK(corpus.ontology.value_name(0, 0) == kNoneValue);
    CHECK(corpus.ontology.value_name(0, 1) == kDontcareValue);
    CHECK(corpus.dialogues[0].turns[0].state[0] == corpus.ontology.value_index(0, "north"));
}

TEST_CASE("corpus validation rejects unknown slots and bad values") {
    std::string bad_slot = R"({"ontology": {"hotel-area": ["none", "dontcare", "north"]},
        "dialogues": [{"id": "x", "turns": [{"system": "a", "user": "b",
        "state": {"hotel-type": "north"}}]}]})";
    CHECK_THROWS_AS(corpus_from_json(bad_slot), SchemaError);
    std::string bad_value = R"({"ontology": {"hotel-area": ["none", "dontcare", "north"]},
        "dialogues": [{"id": "x", "turns": [{"system": "a", "user": "b",
        "state": {"hotel-area": "west"}}]}]})";
    CHECK_THROWS_AS(corpus_from_json(bad_value), SchemaError);
}
