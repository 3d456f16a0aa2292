use super::llm::Attributes;
use super::text::{emotion_adjective, emotion_metaphor, emotion_noun, with_article};

/// One of the eight caption rewrite rules: the instruction sent to a real
/// model and the deterministic rewrite used by the offline client.
pub struct ExpansionRule {
    pub id: u8,
    pub name: &'static str,
    pub instruction: &'static str,
    pub mock: fn(&Attributes) -> String,
}

fn synonym(a: &Attributes) -> String {
    format!(
        "The speaker, {} {}, talks with {} pitch, radiating {} energy, at a {} tempo.",
        with_article(emotion_adjective(a.emotion)),
        a.gender, a.levels.pitch, a.levels.energy, a.levels.tempo
    )
}

fn intensity(a: &Attributes) -> String {
    format!(
        "The speaker, a {} filled with a palpable sense of {}, speaks with {} pitch, {} energy, at a {} pace.",
        a.gender,
        emotion_noun(a.emotion),
        a.levels.pitch,
        a.levels.energy,
        a.levels.tempo
    )
}

fn softening(a: &Attributes) -> String {
    format!(
        "The speaker, a {} with a faint hint of {}, gently speaks with {} pitch, {} energy, at a {} pace.",
        a.gender,
        emotion_noun(a.emotion),
        a.levels.pitch,
        a.levels.energy,
        a.levels.tempo
    )
}

fn reorder(a: &Attributes) -> String {
    format!(
        "At a {} pace, with {} energy and {} pitch, the {} {} speaks.",
        a.levels.tempo,
        a.levels.energy,
        a.levels.pitch,
        emotion_adjective(a.emotion),
        a.gender
    )
}

fn metaphor(a: &Attributes) -> String {
    format!(
        "The {} speaker's voice {}, carrying {} pitch and {} energy at a {} pace.",
        a.gender,
        emotion_metaphor(a.emotion),
        a.levels.pitch,
        a.levels.energy,
        a.levels.tempo
    )
}

fn merge(a: &Attributes) -> String {
    format!(
        "{} {} voice of {} pitch, {} energy and {} pace.",
        capitalize(&with_article(emotion_adjective(a.emotion))),
        a.gender,
        a.levels.pitch,
        a.levels.energy,
        a.levels.tempo
    )
}

fn second_person(a: &Attributes) -> String {
    format!(
        "You hear {} {} speaking with {} pitch, {} energy, at a {} pace.",
        with_article(emotion_adjective(a.emotion)),
        a.gender,
        a.levels.pitch,
        a.levels.energy,
        a.levels.tempo
    )
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

fn terse(a: &Attributes) -> String {
    format!("{} {}; {} pitch, {} energy, {} pace.", capitalize(emotion_adjective(a.emotion)), a.gender, a.levels.pitch, a.levels.energy, a.levels.tempo)
}

pub const RULES: [ExpansionRule; 8] = [
    ExpansionRule {
        id: 1,
        name: "synonym replacement",
        instruction: "Replace ordinary words with vivid synonyms while keeping each attribute's level.",
        mock: synonym,
    },
    ExpansionRule {
        id: 2,
        name: "intensity amplification",
        instruction: "Describe the emotion with stronger, more intense wording.",
        mock: intensity,
    },
    ExpansionRule {
        id: 3,
        name: "intensity softening",
        instruction: "Describe the emotion with gentler, more restrained wording.",
        mock: softening,
    },
    ExpansionRule {
        id: 4,
        name: "clause reordering",
        instruction: "Reorder the clauses so the delivery details come before the speaker.",
        mock: reorder,
    },
    ExpansionRule {
        id: 5,
        name: "metaphorical emotion",
        instruction: "Express the emotion through a metaphor about the voice.",
        mock: metaphor,
    },
    ExpansionRule {
        id: 6,
        name: "attribute merging",
        instruction: "Merge all attributes into a single noun phrase.",
        mock: merge,
    },
    ExpansionRule {
        id: 7,
        name: "second person",
        instruction: "Address the listener in the second person.",
        mock: second_person,
    },
    ExpansionRule {
        id: 8,
        name: "terse register",
        instruction: "Compress the description into a terse, note-like line.",
        mock: terse,
    },
];

pub fn rule(id: u8) -> Option<&'static ExpansionRule> {
    RULES.get(usize::from(id).checked_sub(1)?)
}
