use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// The nine commonsense relations used for knowledge conditioning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relation {
    OEffect,
    OReact,
    OWant,
    XAttr,
    XEffect,
    XIntent,
    XNeed,
    XReact,
    XWant,
}

impl Relation {
    pub const COUNT: usize = 9;

    pub const ALL: [Relation; Self::COUNT] = [
        Relation::OEffect,
        Relation::OReact,
        Relation::OWant,
        Relation::XAttr,
        Relation::XEffect,
        Relation::XIntent,
        Relation::XNeed,
        Relation::XReact,
        Relation::XWant,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Relation::OEffect => "oEffect",
            Relation::OReact => "oReact",
            Relation::OWant => "oWant",
            Relation::XAttr => "xAttr",
            Relation::XEffect => "xEffect",
            Relation::XIntent => "xIntent",
            Relation::XNeed => "xNeed",
            Relation::XReact => "xReact",
            Relation::XWant => "xWant",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Inference returned when no rule matches.
    pub fn generic_inference(self) -> &'static str {
        match self {
            Relation::OEffect => "others are affected",
            Relation::OReact => "others feel something",
            Relation::OWant => "others want something",
            Relation::XAttr => "person x is ordinary",
            Relation::XEffect => "person x is affected",
            Relation::XIntent => "person x intends something",
            Relation::XNeed => "person x needs something",
            Relation::XReact => "person x feels something",
            Relation::XWant => "person x wants something",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Relation::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown relation {s:?}")))
    }
}
