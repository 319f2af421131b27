mod common;

use std::sync::Arc;

use common::*;
use forgetgen::classifier::{train, ClassifierConfig, Label, LabeledEmbedding, MlpParameters, Route};
use forgetgen::data::{Prompt, QaPair, Split};
use forgetgen::decoder::{decode, Constraints, DecodeConfig};
use forgetgen::embedding::{embed_text, BagOfWordsEmbedder, Embedder};
use forgetgen::forbidden::{ExtractionStrategy, KeyPhraseExtractor};
use forgetgen::model::BigramModel;
use forgetgen::pipeline::{Guard, GuardConfig, GuardOutcome, Handles, DEFAULT_REFUSAL};
use forgetgen::retrieval::{AnswerIndex, CosineReranker, RetrievalKey};
use forgetgen::{Error, Stage, TokenId, Tokenizer, Vocabulary, WhitespaceTokenizer};
use rand::Rng;

const WORDS: &[&str] = &[
    "what", "does", "hsiao", "father", "do", "he", "is", "a", "civil", "engineer", "unemployed",
    "teacher", "end", "weather", "today", "sunny", "rain",
];

struct World {
    tok: WhitespaceTokenizer,
    model: BigramModel,
    bow: BagOfWordsEmbedder,
}

impl World {
    fn new() -> Self {
        let vocab = Vocabulary::from_words(WORDS).unwrap();
        let rows = "\
do he 1.0
he is 1.0
is a 0.8
is unemployed 0.2
a civil 0.7
a teacher 0.3
civil engineer 1.0
engineer end 1.0
teacher end 1.0
unemployed end 1.0
today sunny 0.6
today rain 0.4
sunny end 1.0
rain end 1.0
end end 1.0
";
        let model = BigramModel::parse(rows, &vocab, "rows").unwrap();
        World {
            bow: BagOfWordsEmbedder::new(&vocab, 0),
            tok: WhitespaceTokenizer::new(vocab),
            model,
        }
    }

    fn id(&self, w: &str) -> TokenId {
        self.tok.vocabulary().id(w).unwrap()
    }

    fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            max_new_tokens: 6,
            eos_token: Some(self.id("end")),
            ..DecodeConfig::default()
        }
    }
}

/// A classifier whose output ignores its input.
fn constant_classifier(dim: usize, route: Route) -> MlpParameters {
    let mut p = MlpParameters::init(dim, 4, 0.0, 3).unwrap();
    p.output_weight.iter_mut().for_each(|w| *w = 0.0);
    p.output_bias = match route {
        Route::Forget => vec![-10.0, 10.0],
        Route::Retain => vec![10.0, -10.0],
    };
    p
}

fn handles<'a>(w: &'a World, classifier: &'a MlpParameters, index: &'a AnswerIndex) -> Handles<'a> {
    Handles {
        model: &w.model,
        tokenizer: &w.tok,
        classifier,
        prompt_embedder: &w.bow,
        index,
        retrieval_embedder: &w.bow,
        reranker: None,
        semantic_embedder: &w.bow,
    }
}

fn index(w: &World, records: &[(&str, &str)]) -> AnswerIndex {
    let records: Vec<QaPair> = records
        .iter()
        .map(|(q, a)| QaPair::new(*q, *a, Split::Forget).unwrap())
        .collect();
    AnswerIndex::build(&records, &w.bow, RetrievalKey::Question).unwrap()
}

#[test]
fn forbidden_occupation_is_replaced() {
    let w = World::new();
    let idx = index(&w, &[("what does hsiao father do", "a civil engineer")]);
    let clf = constant_classifier(w.bow.dim(), Route::Forget);
    let config = GuardConfig {
        decode: w.decode_config(),
        ..GuardConfig::default()
    };
    let guard = Guard::new(handles(&w, &clf, &idx), config.clone()).unwrap();
    let prompt = Prompt::new("what does hsiao father do").unwrap();

    let plain = guard.plain_generate(&prompt).unwrap();
    assert_eq!(plain, "he is a civil engineer");

    let out = guard.generate(&prompt).unwrap();
    assert_eq!(out.route, Route::Forget);
    assert_eq!(out.retrieved_record, Some(0));
    assert_eq!(out.forbidden_span_count, Some(3));
    assert!(!out.blocked);
    let ids = w.tok.tokenize(&out.output);
    for word in ["civil", "engineer"] {
        assert!(!ids.contains(&w.id(word)), "{} contains {word}", out.output);
    }
    assert_eq!(out.output, "he is unemployed");
}

#[test]
fn every_continuation_forbidden_gives_refusal() {
    let w = World::new();
    let idx = index(&w, &[("what does hsiao father do", "he is a civil engineer")]);
    let clf = constant_classifier(w.bow.dim(), Route::Forget);
    let config = GuardConfig {
        decode: w.decode_config(),
        ..GuardConfig::default()
    };
    let guard = Guard::new(handles(&w, &clf, &idx), config).unwrap();
    let out = guard.generate(&Prompt::new("what does hsiao father do").unwrap()).unwrap();
    assert!(out.blocked);
    assert_eq!(out.output, DEFAULT_REFUSAL);

    let custom = GuardConfig {
        decode: w.decode_config(),
        refusal_text: "No comment.".into(),
        ..GuardConfig::default()
    };
    let guard = Guard::new(handles(&w, &clf, &idx), custom).unwrap();
    let out = guard.generate(&Prompt::new("what does hsiao father do").unwrap()).unwrap();
    assert_eq!(out.output, "No comment.");
}

#[test]
fn retain_route_matches_plain_beam_search() {
    let w = World::new();
    let idx = index(&w, &[("what does hsiao father do", "a civil engineer")]);
    let clf = constant_classifier(w.bow.dim(), Route::Retain);
    let config = GuardConfig {
        decode: w.decode_config(),
        ..GuardConfig::default()
    };
    let guard = Guard::new(handles(&w, &clf, &idx), config.clone()).unwrap();
    for text in ["what does hsiao father do", "weather today"] {
        let prompt = Prompt::new(text).unwrap();
        let out = guard.generate(&prompt).unwrap();
        let ctx = w.tok.tokenize(text);
        let plain = decode(&w.model, &w.tok, &ctx, &Constraints::none(), &config.decode).unwrap();
        let expected = w.tok.detokenize(&plain.best[..plain.best.len() - 1]).unwrap();
        assert_eq!(out.output, expected);
        assert_eq!(out.route, Route::Retain);
        assert_eq!(out.retrieved_record, None);
    }
}

struct Failing;

impl KeyPhraseExtractor for Failing {
    fn extract(&self, _answer: &str) -> forgetgen::Result<Vec<String>> {
        Err(Error::Bridge("extractor offline".into()))
    }
}

#[test]
fn errors_carry_their_stage() {
    let w = World::new();
    let idx = index(&w, &[("what does hsiao father do", "a civil engineer")]);
    let clf = constant_classifier(w.bow.dim(), Route::Forget);
    let config = GuardConfig {
        decode: w.decode_config(),
        extraction: ExtractionStrategy::External(Arc::new(Failing)),
        ..GuardConfig::default()
    };
    let guard = Guard::new(handles(&w, &clf, &idx), config).unwrap();
    let err = guard.generate(&Prompt::new("what does hsiao father do").unwrap()).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: Stage::Extract, .. }), "{err}");
    assert!(err.to_string().contains("extractor offline"));

    let wrong_dim = constant_classifier(3, Route::Forget);
    let config = GuardConfig {
        decode: w.decode_config(),
        ..GuardConfig::default()
    };
    let guard = Guard::new(handles(&w, &wrong_dim, &idx), config).unwrap();
    let err = guard.generate(&Prompt::new("weather today").unwrap()).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: Stage::Classify, .. }), "{err}");
}

#[test]
fn invalid_configs_are_rejected() {
    let w = World::new();
    let idx = index(&w, &[("q", "a")]);
    let clf = constant_classifier(w.bow.dim(), Route::Forget);
    let bad = [
        GuardConfig { threshold: 1.0, ..GuardConfig::default() },
        GuardConfig {
            retrieval: forgetgen::pipeline::RetrievalSettings { rerank: true, k: 3 },
            ..GuardConfig::default()
        },
        GuardConfig {
            decode: DecodeConfig { beam_width: 0, ..DecodeConfig::default() },
            ..GuardConfig::default()
        },
    ];
    for cfg in bad {
        assert!(Guard::new(handles(&w, &clf, &idx), cfg).is_err());
    }
}

#[test]
fn rerank_route_uses_reranker() {
    let w = World::new();
    let idx = index(
        &w,
        &[("weather today", "sunny"), ("what does hsiao father do", "a civil engineer")],
    );
    let clf = constant_classifier(w.bow.dim(), Route::Forget);
    let reranker = CosineReranker { embedder: &w.bow };
    let mut h = handles(&w, &clf, &idx);
    h.reranker = Some(&reranker);
    let config = GuardConfig {
        decode: w.decode_config(),
        retrieval: forgetgen::pipeline::RetrievalSettings { rerank: true, k: 5 },
        ..GuardConfig::default()
    };
    let guard = Guard::new(h, config).unwrap();
    let out = guard.generate(&Prompt::new("what does hsiao father do").unwrap()).unwrap();
    assert_eq!(out.retrieved_record, Some(1));
    assert_eq!(out.output, "he is unemployed");
}

fn trained_router(w: &World) -> MlpParameters {
    let mut rng = rng(11);
    let forget_words = ["what", "does", "hsiao", "father", "do"];
    let retain_words = ["weather", "today", "is", "a"];
    let mut data = Vec::new();
    for _ in 0..40 {
        for (pool, label) in [(&forget_words[..], Label::Forget), (&retain_words[..], Label::Retain)] {
            let n = rng.random_range(2..=4);
            let text: Vec<&str> = (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect();
            let vector = embed_text(&w.bow, &text.join(" ")).unwrap();
            data.push(LabeledEmbedding { vector, label });
        }
    }
    train(&data, &ClassifierConfig { hidden_dim: 16, ..ClassifierConfig::default() }).unwrap()
}

#[test]
fn batch_matches_individual_calls() {
    let w = World::new();
    let idx = index(&w, &[("what does hsiao father do", "a civil engineer"), ("weather today", "rain")]);
    let clf = trained_router(&w);
    let config = GuardConfig {
        decode: w.decode_config(),
        ..GuardConfig::default()
    };
    let guard = Guard::new(handles(&w, &clf, &idx), config).unwrap();
    let mut rng = rng(5);
    let prompts: Vec<Prompt> = (0..50)
        .map(|i| {
            let n = rng.random_range(1..=5);
            let text: Vec<&str> = (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
            Prompt::with_id(Some(format!("p{i}")), text.join(" ")).unwrap()
        })
        .collect();
    let batch = guard.generate_batch(&prompts);
    let single: Vec<_> = prompts.iter().map(|p| guard.generate(p)).collect();
    assert_eq!(batch.len(), single.len());
    let mut routes = std::collections::HashSet::new();
    for (b, s) in batch.iter().zip(&single) {
        let (b, s) = (b.as_ref().unwrap(), s.as_ref().unwrap());
        assert_eq!(b, s);
        routes.insert(b.route);
    }
    assert_eq!(routes.len(), 2, "fixture should exercise both routes");

    let one = guard.generate_batch(&prompts[..1]);
    assert_eq!(one[0].as_ref().unwrap(), single[0].as_ref().unwrap());
    let (left, right) = prompts.split_at(17);
    let joined: Vec<GuardOutcome> = guard
        .generate_batch(left)
        .into_iter()
        .chain(guard.generate_batch(right))
        .map(|r| r.unwrap())
        .collect();
    let whole: Vec<GuardOutcome> = batch.into_iter().map(|r| r.unwrap()).collect();
    assert_eq!(joined, whole);
}

#[test]
fn outcome_serializes_as_flat_json() {
    let out = GuardOutcome {
        id: Some("x1".into()),
        route: Route::Forget,
        retrieved_record: Some(2),
        forbidden_span_count: Some(3),
        output: "he is unemployed".into(),
        blocked: false,
    };
    let json = serde_json::to_value(&out).unwrap();
    assert_eq!(json["id"], "x1");
    assert_eq!(json["retrieved_record"], 2);
    assert_eq!(json["output"], "he is unemployed");
    let back: GuardOutcome = serde_json::from_value(json).unwrap();
    assert_eq!(back, out);
}
