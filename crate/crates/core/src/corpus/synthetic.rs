//! Seeded generator of risk-factor style sentences for desk-scale runs.
//!
//! Positive sentences carry one planted climate phrase; negatives are built
//! from the same financial vocabulary and sometimes mention environmental
//! topics that the labeling rules treat as not climate related (pollution,
//! general environmental compliance).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Corpus, Label, LabeledSentence, Source};

const SUBJECTS: &[&str] = &[
    "Our business",
    "The Company",
    "Our operating results",
    "Our customers",
    "Our suppliers",
    "Demand for our products",
    "Our international operations",
    "Our financial condition",
    "Our manufacturing facilities",
    "Our distribution network",
    "Our credit facility",
    "Our stock price",
    "Our insurance coverage",
    "Our revenue",
    "Our margins",
    "Our workforce",
    "Our information systems",
    "Our joint ventures",
];

const VERBS: &[&str] = &[
    "could be adversely affected by",
    "may be harmed by",
    "depends significantly on",
    "is exposed to",
    "may fluctuate due to",
    "could suffer from",
    "is subject to",
    "may be materially impacted by",
    "remains vulnerable to",
    "could decline because of",
];

const OBJECTS: &[&str] = &[
    "changes in interest rates",
    "currency exchange fluctuations",
    "competition from larger firms",
    "cybersecurity incidents",
    "the loss of key personnel",
    "product liability claims",
    "disruptions in our supply chain",
    "changes in tax law",
    "litigation and regulatory proceedings",
    "economic downturns",
    "labor shortages",
    "pricing pressure from retailers",
    "the integration of acquired businesses",
    "volatility in commodity prices",
    "our level of indebtedness",
    "the failure of our technology platforms",
    "changes in consumer preferences",
    "trade restrictions and tariffs",
    "pandemics and public health crises",
    "intellectual property disputes",
];

const TAILS: &[&str] = &[
    "in future periods",
    "which could reduce our profitability",
    "and we may not be able to respond effectively",
    "in the markets where we operate",
    "over the next several years",
    "despite our mitigation efforts",
    "and our insurance may be inadequate",
    "which may require additional capital",
];

const CLIMATE_PHRASES: &[&str] = &[
    "climate change",
    "global warming",
    "greenhouse gas emissions",
    "carbon emissions regulation",
    "rising sea levels",
    "more frequent extreme weather caused by climate change",
    "a carbon tax",
    "the Paris climate agreement",
    "the transition to a low carbon economy",
    "climate related physical risks",
    "rising global temperatures",
    "emissions reduction mandates",
];

const ENVIRONMENT_DISTRACTORS: &[&str] = &[
    "environmental compliance costs",
    "pollution control requirements",
    "hazardous waste remediation",
    "water quality permits",
    "workplace safety regulations",
    "seasonal weather patterns",
];

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> &'a str {
    pool.choose(rng).expect("non-empty pool")
}

fn sentence(rng: &mut ChaCha8Rng, positive: bool) -> String {
    let subject = pick(rng, SUBJECTS);
    let verb = pick(rng, VERBS);
    let object = if positive {
        pick(rng, CLIMATE_PHRASES).to_owned()
    } else if rng.gen_bool(0.2) {
        pick(rng, ENVIRONMENT_DISTRACTORS).to_owned()
    } else {
        pick(rng, OBJECTS).to_owned()
    };
    let second = if rng.gen_bool(0.5) {
        format!(" and {}", pick(rng, OBJECTS))
    } else {
        String::new()
    };
    let (first, second) = if rng.gen_bool(0.5) {
        (object, second)
    } else {
        // climate phrase second in half of the sentences
        let other = pick(rng, OBJECTS).to_owned();
        (other, format!(" and {object}"))
    };
    let tail = if rng.gen_bool(0.6) {
        format!(" {}", pick(rng, TAILS))
    } else {
        String::new()
    };
    format!("{subject} {verb} {first}{second}{tail}.")
}

/// Generates `n` sentences, `round(n * positive_fraction)` of them positive,
/// in a seed-determined order.
pub fn generate(n: usize, positive_fraction: f64, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pos = ((n as f64) * positive_fraction.clamp(0.0, 1.0)).round() as usize;
    let mut labels: Vec<Label> = (0..n)
        .map(|i| if i < n_pos { Label::Climate } else { Label::Other })
        .collect();
    labels.shuffle(&mut rng);
    let records = labels
        .into_iter()
        .map(|label| {
            let text = sentence(&mut rng, label == Label::Climate);
            LabeledSentence::new(text, label, Source::Synthetic).expect("generated text is non-empty")
        })
        .collect();
    Corpus::new(format!("synthetic-{n}-{seed}"), records)
}
