//! Synthetic extractive-QA corpus with a controllable train/test shift.
//!
//! Every example is one fact sentence ("alice was born in paris .") buried
//! among distractor facts, with a question whose answer is a contiguous
//! token span of the document. A template family is a (relation, phrasing
//! style) pair; shift gives train and test disjoint phrasing styles and
//! disjoint entity halves, so a model pre-trained on the train split is
//! measurably imperfect on the test split and has headroom to self-adapt.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use tsas_core::{derive_sample_seed, QaExample};

struct Relation {
    fact: &'static str,
    questions: [&'static str; 2],
    values: &'static [&'static str],
}

const NAMES: &[&str] = &[
    "alice", "bob", "carol", "david", "erin", "frank", "grace", "henry", "irene", "jack",
    "karen", "leo", "mona", "nathan", "olivia", "peter", "quinn", "rosa", "sam", "tina",
    "ursula", "victor", "wendy", "xavier", "yara", "zane", "abel", "bella", "cyrus", "dora",
    "edgar", "flora",
];

const CITIES: &[&str] = &[
    "paris", "london", "tokyo", "madrid", "berlin", "oslo", "cairo", "lima", "rome", "dublin",
    "moscow", "athens", "vienna", "prague", "lisbon", "sofia", "zagreb", "riga", "new york",
    "los angeles", "san diego", "hong kong", "buenos aires", "cape town",
];

const ANIMALS: &[&str] = &[
    "cat", "dog", "parrot", "rabbit", "ferret", "hamster", "turtle", "iguana", "otter", "fox",
    "gecko", "pony", "crow", "snail", "hedgehog", "llama",
];

const JOBS: &[&str] = &[
    "baker", "teacher", "plumber", "pilot", "nurse", "farmer", "tailor", "barber", "chemist",
    "judge", "carpenter", "florist", "butcher", "sailor", "welder", "clerk",
];

const INSTRUMENTS: &[&str] = &[
    "piano", "violin", "drums", "flute", "cello", "banjo", "harp", "oboe", "trumpet", "guitar",
    "clarinet", "viola", "bassoon", "organ", "sitar", "ukulele",
];

const RELATIONS: &[Relation] = &[
    Relation {
        fact: "{name} was born in {value} .",
        questions: ["where was {name} born", "in which city was {name} born"],
        values: CITIES,
    },
    Relation {
        fact: "{name} has a pet {value} .",
        questions: ["what pet does {name} have", "which animal does {name} keep as a pet"],
        values: ANIMALS,
    },
    Relation {
        fact: "{name} works as a {value} .",
        questions: ["what does {name} work as", "what is the job of {name}"],
        values: JOBS,
    },
    Relation {
        fact: "{name} plays the {value} .",
        questions: ["what instrument does {name} play", "which instrument is played by {name}"],
        values: INSTRUMENTS,
    },
];

/// Family id encoding: `relation * 2 + style`; style 0 and 1 are the two
/// question phrasings of the relation.
pub fn family_count() -> u32 {
    (RELATIONS.len() * 2) as u32
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_train: u32,
    pub num_test: u32,
    /// Template families the train split draws from.
    pub train_families: Vec<u32>,
    /// Template families the test split draws from; disjoint from
    /// `train_families` when shift is enabled.
    pub test_families: Vec<u32>,
    /// Split each entity pool in half between train and test.
    pub entity_shift: bool,
    /// Cap on each entity pool.
    pub entity_pool: u32,
    /// Distractor sentences per document.
    pub distractors: u32,
    pub seed: u64,
}

impl SynthSpec {
    /// Disjoint question phrasings and entity halves between splits.
    pub fn shifted(num_train: u32, num_test: u32, seed: u64) -> Self {
        let style0 = (0..RELATIONS.len() as u32).map(|r| r * 2).collect();
        let style1 = (0..RELATIONS.len() as u32).map(|r| r * 2 + 1).collect();
        SynthSpec {
            num_train,
            num_test,
            train_families: style0,
            test_families: style1,
            entity_shift: true,
            entity_pool: 16,
            distractors: 3,
            seed,
        }
    }

    /// Train and test drawn from identical families and entity pools.
    pub fn unshifted(num_train: u32, num_test: u32, seed: u64) -> Self {
        let style0: Vec<u32> = (0..RELATIONS.len() as u32).map(|r| r * 2).collect();
        SynthSpec {
            train_families: style0.clone(),
            test_families: style0,
            entity_shift: false,
            ..SynthSpec::shifted(num_train, num_test, seed)
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        for fam in self.train_families.iter().chain(&self.test_families) {
            if *fam >= family_count() {
                return Err(SynthError::UnknownFamily(*fam));
            }
        }
        if self.train_families.is_empty() || self.test_families.is_empty() {
            return Err(SynthError::NoFamilies);
        }
        let needed = if self.entity_shift { 4 } else { 2 };
        if self.entity_pool < needed {
            return Err(SynthError::PoolExhausted {
                kind: "any",
                needed: needed as usize,
                available: self.entity_pool as usize,
            });
        }
        for (kind, pool) in
            [("name", NAMES), ("city", CITIES), ("animal", ANIMALS), ("job", JOBS), ("instrument", INSTRUMENTS)]
        {
            if self.entity_pool as usize > pool.len() {
                return Err(SynthError::PoolExhausted {
                    kind,
                    needed: self.entity_pool as usize,
                    available: pool.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("entity pool `{kind}` exhausted: need {needed}, have {available}")]
    PoolExhausted { kind: &'static str, needed: usize, available: usize },
    #[error("unknown template family {0}")]
    UnknownFamily(u32),
    #[error("each split needs at least one template family")]
    NoFamilies,
    #[error("could not place {0} distinct distractors; shrink distractors or grow entity_pool")]
    DistractorSpace(u32),
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub train: Vec<QaExample>,
    pub test: Vec<QaExample>,
}

#[derive(Clone, Copy)]
enum Split {
    Train,
    Test,
}

impl Split {
    fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

pub fn synthesize(spec: &SynthSpec) -> Result<SynthCorpus, SynthError> {
    spec.validate()?;
    Ok(SynthCorpus {
        train: generate_split(spec, Split::Train)?,
        test: generate_split(spec, Split::Test)?,
    })
}

/// The slice of a pool a split may draw from.
fn segment<'p>(pool: &'p [&'static str], spec: &SynthSpec, split: Split) -> &'p [&'static str] {
    let cap = spec.entity_pool as usize;
    let capped = &pool[..cap.min(pool.len())];
    if !spec.entity_shift {
        return capped;
    }
    let half = capped.len() / 2;
    match split {
        Split::Train => &capped[..half],
        Split::Test => &capped[half..],
    }
}

fn fill(template: &str, name: &str, value: &str) -> String {
    template.replace("{name}", name).replace("{value}", value)
}

fn generate_split(spec: &SynthSpec, split: Split) -> Result<Vec<QaExample>, SynthError> {
    let count = match split {
        Split::Train => spec.num_train,
        Split::Test => spec.num_test,
    };
    let families = match split {
        Split::Train => &spec.train_families,
        Split::Test => &spec.test_families,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_sample_seed(spec.seed, split.tag(), 0));
    let names = segment(NAMES, spec, split);

    let mut examples = Vec::with_capacity(count as usize);
    for i in 0..count {
        let family = families[rng.gen_range(0..families.len())];
        let (rel_index, style) = ((family / 2) as usize, (family % 2) as usize);
        let relation = &RELATIONS[rel_index];
        let values = segment(relation.values, spec, split);
        let name = names[rng.gen_range(0..names.len())];
        let value = values[rng.gen_range(0..values.len())];

        let mut sentences = vec![fill(relation.fact, name, value)];
        let mut used: Vec<(usize, &str)> = vec![(rel_index, name)];
        for _ in 0..spec.distractors {
            let mut placed = false;
            for _attempt in 0..100 {
                let d_rel_index = rng.gen_range(0..RELATIONS.len());
                let d_relation = &RELATIONS[d_rel_index];
                let d_values = segment(d_relation.values, spec, split);
                let d_name = names[rng.gen_range(0..names.len())];
                let d_value = d_values[rng.gen_range(0..d_values.len())];
                if d_value == value || used.contains(&(d_rel_index, d_name)) {
                    continue;
                }
                used.push((d_rel_index, d_name));
                sentences.push(fill(d_relation.fact, d_name, d_value));
                placed = true;
                break;
            }
            if !placed {
                return Err(SynthError::DistractorSpace(spec.distractors));
            }
        }
        sentences.shuffle(&mut rng);

        let document = sentences.join(" ");
        let question = fill(relation.questions[style], name, value);
        let id = format!("{}-{i:04}", split.tag());
        let example = QaExample::new(id, question, document, vec![value.to_string()])
            .expect("templates are non-empty");
        examples.push(example);
    }
    Ok(examples)
}
