//! Keyword tables used by the offline client and the consistency check.

use crate::corpus::{Emotion, Gender, Level};

use super::llm::Attributes;

pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric() && c != '\'')
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn emotion_keywords(e: Emotion) -> &'static [&'static str] {
    match e {
        Emotion::Angry => &["angry", "anger", "fury", "furious", "rage", "enraged", "irritated", "annoyed"],
        Emotion::Contempt => &["contempt", "contemptuous", "disdain", "disdainful", "scorn", "scornful", "sneering"],
        Emotion::Disgusted => &["disgusted", "disgust", "revulsion", "repulsed", "revolted"],
        Emotion::Fear => &["fear", "fearful", "afraid", "dread", "scared", "terrified", "frightened"],
        Emotion::Happy => &["happy", "happiness", "joy", "joyful", "cheerful", "delighted", "glad"],
        Emotion::Sad => &["sad", "sadness", "sorrow", "sorrowful", "melancholy", "gloomy", "grief"],
        Emotion::Neutral => &["neutral", "calm", "composed", "matter-of-fact"],
        Emotion::Surprised => &["surprised", "surprise", "astonishment", "astonished", "amazed"],
    }
}

pub fn emotion_adjective(e: Emotion) -> &'static str {
    match e {
        Emotion::Angry => "angry",
        Emotion::Contempt => "contemptuous",
        Emotion::Disgusted => "disgusted",
        Emotion::Fear => "fearful",
        Emotion::Happy => "happy",
        Emotion::Sad => "sad",
        Emotion::Neutral => "neutral",
        Emotion::Surprised => "surprised",
    }
}

/// `word` preceded by "a" or "an".
pub fn with_article(word: &str) -> String {
    let an = word.starts_with(|c: char| "aeiouAEIOU".contains(c));
    format!("{} {word}", if an { "an" } else { "a" })
}

/// Noun used by the intensity and softening rewrites.
pub fn emotion_noun(e: Emotion) -> &'static str {
    match e {
        Emotion::Angry => "fury",
        Emotion::Contempt => "disdain",
        Emotion::Disgusted => "revulsion",
        Emotion::Fear => "dread",
        Emotion::Happy => "joy",
        Emotion::Sad => "sorrow",
        Emotion::Neutral => "calm",
        Emotion::Surprised => "astonishment",
    }
}

pub fn emotion_metaphor(e: Emotion) -> &'static str {
    match e {
        Emotion::Angry => "burns with fury",
        Emotion::Contempt => "drips with disdain",
        Emotion::Disgusted => "recoils in revulsion",
        Emotion::Fear => "trembles with dread",
        Emotion::Happy => "sparkles with joy",
        Emotion::Sad => "is heavy with sorrow",
        Emotion::Neutral => "rests in quiet calm",
        Emotion::Surprised => "leaps with astonishment",
    }
}

/// Cue words in dialogue text, checked in order of appearance.
const TEXT_CUES: &[(&str, Emotion)] = &[
    ("hate", Emotion::Angry),
    ("furious", Emotion::Angry),
    ("angry", Emotion::Angry),
    ("ridiculous", Emotion::Angry),
    ("pathetic", Emotion::Contempt),
    ("whatever", Emotion::Contempt),
    ("gross", Emotion::Disgusted),
    ("disgusting", Emotion::Disgusted),
    ("scared", Emotion::Fear),
    ("afraid", Emotion::Fear),
    ("worried", Emotion::Fear),
    ("great", Emotion::Happy),
    ("wonderful", Emotion::Happy),
    ("love", Emotion::Happy),
    ("happy", Emotion::Happy),
    ("thanks", Emotion::Happy),
    ("sorry", Emotion::Sad),
    ("miss", Emotion::Sad),
    ("sad", Emotion::Sad),
    ("lost", Emotion::Sad),
    ("wow", Emotion::Surprised),
    ("really", Emotion::Surprised),
    ("unbelievable", Emotion::Surprised),
];

pub fn keyword_emotion(text: &str) -> Emotion {
    for w in words(text) {
        if let Some((_, e)) = TEXT_CUES.iter().find(|(cue, _)| *cue == w) {
            return *e;
        }
    }
    Emotion::Neutral
}

pub fn mentioned_emotions(ws: &[String]) -> Vec<Emotion> {
    Emotion::ALL.into_iter().filter(|e| emotion_keywords(*e).iter().any(|k| ws.iter().any(|w| w == k))).collect()
}

fn gender_words(g: Gender) -> &'static [&'static str] {
    match g {
        Gender::Female => &["female", "woman", "girl", "lady", "she"],
        Gender::Male => &["male", "man", "boy", "gentleman", "he"],
    }
}

pub fn mentioned_genders(ws: &[String]) -> Vec<Gender> {
    [Gender::Male, Gender::Female].into_iter().filter(|g| gender_words(*g).iter().any(|k| ws.iter().any(|w| w == k))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attribute {
    Pitch,
    Energy,
    Tempo,
}

fn attribute_nouns(a: Attribute) -> &'static [&'static str] {
    match a {
        Attribute::Pitch => &["pitch", "pitched"],
        Attribute::Energy => &["energy"],
        Attribute::Tempo => &["pace", "tempo"],
    }
}

fn level_word(w: &str) -> Option<Level> {
    match w {
        "low" | "lower" | "lowered" => Some(Level::Low),
        "normal" | "moderate" | "medium" | "average" | "steady" => Some(Level::Normal),
        "high" | "higher" | "heightened" | "elevated" => Some(Level::High),
        _ => None,
    }
}

/// Levels stated for `attr`: a level word within the two words before each
/// occurrence of the attribute noun.
pub fn mentioned_levels(ws: &[String], attr: Attribute) -> Vec<Level> {
    let nouns = attribute_nouns(attr);
    let mut out = Vec::new();
    for (i, w) in ws.iter().enumerate() {
        if nouns.contains(&w.as_str()) {
            if let Some(l) = ws[i.saturating_sub(2)..i].iter().rev().find_map(|p| level_word(p)) {
                out.push(l);
            }
        }
    }
    out
}

/// Contradictions between a caption and the attributes. Attributes the caption
/// does not mention are not contradictions.
pub fn contradictions(caption: &str, a: &Attributes) -> Vec<String> {
    let ws = words(caption);
    let mut out = Vec::new();
    let emotions = mentioned_emotions(&ws);
    if !emotions.is_empty() && !emotions.contains(&a.emotion) {
        out.push(format!("emotion {:?} stated, expected {}", emotions, a.emotion));
    }
    let genders = mentioned_genders(&ws);
    if !genders.is_empty() && !genders.contains(&a.gender) {
        out.push(format!("gender {:?} stated, expected {}", genders, a.gender));
    }
    for (attr, want) in [(Attribute::Pitch, a.levels.pitch), (Attribute::Energy, a.levels.energy), (Attribute::Tempo, a.levels.tempo)] {
        for got in mentioned_levels(&ws, attr) {
            if got != want {
                out.push(format!("{attr:?} level {got} stated, expected {want}"));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::StyleLevels;

    fn attrs() -> Attributes {
        Attributes {
            emotion: Emotion::Angry,
            gender: Gender::Female,
            levels: StyleLevels { pitch: Level::High, energy: Level::High, tempo: Level::Normal },
        }
    }

    #[test]
    fn female_does_not_match_male() {
        let ws = words("The speaker, a female voice");
        assert_eq!(mentioned_genders(&ws), vec![Gender::Female]);
    }

    #[test]
    fn level_extraction() {
        let ws = words("speaks with high pitch, radiating low energy, at a moderate pace");
        assert_eq!(mentioned_levels(&ws, Attribute::Pitch), vec![Level::High]);
        assert_eq!(mentioned_levels(&ws, Attribute::Energy), vec![Level::Low]);
        assert_eq!(mentioned_levels(&ws, Attribute::Tempo), vec![Level::Normal]);
    }

    #[test]
    fn contradiction_policy() {
        assert!(contradictions("A furious female speaks with high pitch and high energy.", &attrs()).is_empty());
        assert!(!contradictions("A furious male speaks loudly.", &attrs()).is_empty());
        assert!(!contradictions("She speaks with low pitch.", &attrs()).is_empty());
        assert!(contradictions("Filled with a palpable sense of fury, she speaks with high energy.", &attrs()).is_empty());
        assert!(!contradictions("A joyful woman.", &attrs()).is_empty());
    }

    #[test]
    fn text_cues() {
        assert_eq!(keyword_emotion("I really hate this"), Emotion::Surprised);
        assert_eq!(keyword_emotion("I hate this, really"), Emotion::Angry);
        assert_eq!(keyword_emotion("See you tomorrow"), Emotion::Neutral);
    }
}
