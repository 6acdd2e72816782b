//! Toy corpus where the label of each sample is the polarity of the
//! opinion word governing the aspect in the dependency tree. Half of the
//! sentences carry a second clause about a different aspect with its own
//! opinion word, so position alone does not identify the right one.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AspectSample, Dependency, Polarity};

const ASPECTS: [&str; 8] = [
    "food", "service", "staff", "price", "menu", "decor", "wine", "music",
];
const POSITIVE: [&str; 4] = ["great", "tasty", "friendly", "excellent"];
const NEUTRAL: [&str; 4] = ["average", "okay", "standard", "ordinary"];
const NEGATIVE: [&str; 4] = ["awful", "rude", "bland", "terrible"];
const LINKS: [&str; 2] = ["but", "and"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticOptions {
    pub samples: usize,
    pub seed: u64,
}

fn opinion<R: Rng>(p: Polarity, rng: &mut R) -> &'static str {
    let words = match p {
        Polarity::Positive => &POSITIVE,
        Polarity::Neutral => &NEUTRAL,
        Polarity::Negative => &NEGATIVE,
    };
    words.choose(rng).expect("non-empty word list")
}

/// `the <aspect> was <opinion>` starting at `offset`; the opinion word
/// heads the clause.
fn clause(aspect: &str, word: &str, offset: usize) -> (Vec<String>, Vec<Dependency>) {
    let tokens = ["the", aspect, "was", word].map(String::from).to_vec();
    let deps = vec![
        Dependency::new(Some(offset + 1), offset, "det"),
        Dependency::new(Some(offset + 3), offset + 1, "nsubj"),
        Dependency::new(Some(offset + 3), offset + 2, "cop"),
    ];
    (tokens, deps)
}

/// Deterministic corpus of `samples` sentences with labels cycling
/// through positive, neutral, negative.
pub fn synthetic_corpus(opts: &SyntheticOptions) -> Vec<AspectSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    (0..opts.samples)
        .map(|i| {
            let label = Polarity::ALL[i % 3];
            let mut names = ASPECTS.to_vec();
            names.shuffle(&mut rng);
            let (mut tokens, mut deps) = clause(names[0], opinion(label, &mut rng), 0);
            deps.push(Dependency::new(None, 3, "root"));
            let mut aspect_start = 1;
            if rng.gen_bool(0.5) {
                let other = Polarity::ALL[rng.gen_range(0..3)];
                let link = *LINKS.choose(&mut rng).expect("non-empty");
                let (t2, d2) = clause(names[1], opinion(other, &mut rng), 5);
                tokens.push(link.to_string());
                tokens.extend(t2);
                deps.push(Dependency::new(Some(8), 4, "cc"));
                deps.extend(d2);
                deps.push(Dependency::new(Some(3), 8, "conj"));
                // The target clause is the first or the second one.
                if rng.gen_bool(0.5) {
                    let head_first = tokens[3].clone();
                    let head_second = tokens[8].clone();
                    tokens[3] = head_second;
                    tokens[8] = head_first;
                    let a = tokens[1].clone();
                    tokens[1] = tokens[6].clone();
                    tokens[6] = a;
                    aspect_start = 6;
                }
            }
            deps.sort_by_key(|d| d.dependent);
            AspectSample {
                tokens,
                aspect_start,
                aspect_len: 1,
                label,
                deps,
            }
        })
        .collect()
}

/// A sample of `n` tokens over a uniformly random tree: nodes are
/// visited in random order and each attaches to an earlier-visited node.
/// Tokens come from `words`, relations from `relations`, and the aspect
/// span (1 to 3 tokens) and label are random.
pub fn random_tree_sample<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    words: &[&str],
    relations: &[&str],
) -> AspectSample {
    assert!(n >= 1 && !words.is_empty() && !relations.is_empty());
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut deps = vec![Dependency::new(None, order[0], "root")];
    for k in 1..n {
        let head = order[rng.gen_range(0..k)];
        let rel = relations[rng.gen_range(0..relations.len())];
        deps.push(Dependency::new(Some(head), order[k], rel));
    }
    deps.sort_by_key(|d| d.dependent);
    let aspect_start = rng.gen_range(0..n);
    let aspect_len = rng.gen_range(1..=(n - aspect_start).min(3));
    AspectSample {
        tokens: (0..n)
            .map(|_| words[rng.gen_range(0..words.len())].to_string())
            .collect(),
        aspect_start,
        aspect_len,
        label: Polarity::ALL[rng.gen_range(0..3)],
        deps,
    }
}
