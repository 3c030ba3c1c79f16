//! Templated cause-and-effect stories over a closed vocabulary.
//!
//! Each story picks an agent, an object the agent wants, and a mishap. The
//! past observation states the goal, the hypothesis states the mishap and the
//! future observation states its consequence:
//!
//! ```text
//! obs1: sam wanted to buy the bike
//! hyp:  sam lost the money for the bike
//! obs2: sam could not pay at the store
//! ```
//!
//! The agent and object are read off `obs1` and the mishap off `obs2`, so
//! the gold hypothesis is a deterministic function of the two observations.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::AbductiveInstance;
use crate::error::{Error, Result};
use crate::text;

pub const AGENTS: [&str; 10] = ["amy", "ben", "joe", "kate", "lily", "max", "nikki", "sam", "sue", "tom"];
pub const OBJECTS: [&str; 8] = ["bike", "book", "cake", "candy", "computer", "game", "shoes", "ticket"];

const GOAL: &str = "{a} wanted to buy the {o}";

/// (hypothesis template, consequence template) per mishap.
pub const CAUSES: [(&str, &str); 5] = [
    ("{a} lost the money for the {o}", "{a} could not pay at the store"),
    ("{a} found the {o} shop closed", "{a} had to come back the next day"),
    ("{a} got sick before buying the {o}", "{a} stayed in bed all week"),
    ("{a} bought the {o} but it was stolen", "{a} came home to an empty box"),
    ("mom said {a} could not have the {o}", "{a} was very mad at mom"),
];

fn fill(template: &str, agent: &str, object: &str) -> String {
    template.replace("{a}", agent).replace("{o}", object)
}

/// Split sizes beyond the training size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorldConfig {
    pub dev_size: usize,
    pub test_size: usize,
}

impl WorldConfig {
    /// Dev and test each one sixth of the training size.
    pub fn proportional(train_size: usize) -> Self {
        Self {
            dev_size: train_size / 6,
            test_size: train_size / 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthCorpus {
    pub train: Vec<AbductiveInstance>,
    pub dev: Vec<AbductiveInstance>,
    pub test: Vec<AbductiveInstance>,
}

impl SynthCorpus {
    pub fn all(&self) -> impl Iterator<Item = &AbductiveInstance> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }
}

pub type Triple = (usize, usize, usize);

pub fn story(triple: Triple) -> (String, String, String) {
    let (a, o, c) = triple;
    let (agent, object) = (AGENTS[a], OBJECTS[o]);
    (
        fill(GOAL, agent, object),
        fill(CAUSES[c].0, agent, object),
        fill(CAUSES[c].1, agent, object),
    )
}

/// Recovers (agent, object, cause) from the two observations.
pub fn parse_observations(obs1: &str, obs2: &str) -> Option<Triple> {
    let o1 = text::normalize(obs1);
    let o2 = text::normalize(obs2);
    for (a, agent) in AGENTS.iter().enumerate() {
        for (o, object) in OBJECTS.iter().enumerate() {
            if fill(GOAL, agent, object) != o1 {
                continue;
            }
            let c = CAUSES.iter().position(|(_, cons)| fill(cons, agent, object) == o2)?;
            return Some((a, o, c));
        }
    }
    None
}

/// Inverse lookup: the unique gold hypothesis for a pair of observations.
pub fn gold_hypothesis(obs1: &str, obs2: &str) -> Option<String> {
    parse_observations(obs1, obs2).map(|t| story(t).1)
}

/// Every word the world can produce.
pub fn world_words() -> Vec<String> {
    let mut out = Vec::new();
    for a in AGENTS {
        for o in OBJECTS {
            out.extend(text::words(&fill(GOAL, a, o)));
            for (h, c) in CAUSES {
                out.extend(text::words(&fill(h, a, o)));
                out.extend(text::words(&fill(c, a, o)));
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Generates `size` training instances plus dev/test splits. The
/// (agent, object, cause) triples are partitioned across splits, so no triple
/// occurs in two splits. When a split asks for more instances than its share
/// of triples, instances are drawn with replacement from that share.
pub fn synth_corpus(seed: u64, size: usize, world: WorldConfig) -> Result<SynthCorpus> {
    if size < 30 {
        return Err(Error::Config(format!("synthetic corpus size {size} is below 30")));
    }
    let mut triples: Vec<Triple> = (0..AGENTS.len())
        .flat_map(|a| (0..OBJECTS.len()).flat_map(move |o| (0..CAUSES.len()).map(move |c| (a, o, c))))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    triples.shuffle(&mut rng);

    let sizes = [size, world.dev_size, world.test_size];
    let total: usize = sizes.iter().sum();
    let pools: Vec<Vec<Triple>> = if total <= triples.len() {
        let mut start = 0;
        sizes
            .iter()
            .map(|&n| {
                let pool = triples[start..start + n].to_vec();
                start += n;
                pool
            })
            .collect()
    } else {
        let mut start = 0;
        let mut pools = Vec::new();
        for (i, &n) in sizes.iter().enumerate() {
            let share = if i == 2 {
                triples.len() - start
            } else {
                (n * triples.len() / total).max(usize::from(n > 0))
            };
            pools.push(triples[start..start + share].to_vec());
            start += share;
        }
        pools
    };

    let mut splits = Vec::new();
    for ((name, &n), pool) in ["train", "dev", "test"].iter().zip(&sizes).zip(&pools) {
        let picked: Vec<Triple> = if n <= pool.len() {
            pool[..n].to_vec()
        } else {
            (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect()
        };
        let split = picked
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                let (o1, h, o2) = story(t);
                AbductiveInstance::new(format!("synth-{name}-{i:04}"), &o1, &o2, [h])
            })
            .collect::<Result<Vec<_>>>()?;
        splits.push(split);
    }
    let test = splits.pop().expect("three splits");
    let dev = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok(SynthCorpus { train, dev, test })
}
