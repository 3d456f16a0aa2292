use super::llm::DialogTurn;

pub const DIALOG_EMOTION: &str = include_str!("../../prompts/dialog_emotion.txt");
pub const GENDER: &str = include_str!("../../prompts/gender.txt");
pub const BASIC_DESCRIPTION: &str = include_str!("../../prompts/basic_description.txt");
pub const EXPAND_CAPTION: &str = include_str!("../../prompts/expand_caption.txt");
pub const VERIFY_CAPTION: &str = include_str!("../../prompts/verify_caption.txt");

/// Substitutes `{key}` placeholders.
pub fn render(template: &str, vars: &[(&str, String)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

pub fn render_dialog_prompt(turns: &[DialogTurn]) -> String {
    let blocks: Vec<String> = turns
        .iter()
        .enumerate()
        .map(|(i, t)| {
            format!(
                "<utterance index=\"{}\" speaker=\"{}\" role=\"{}\" audio=\"{}\">\n{}\n</utterance>",
                i + 1,
                t.speaker_id,
                match t.role {
                    crate::corpus::Role::User => "user",
                    crate::corpus::Role::Agent => "agent",
                },
                t.audio.as_deref().unwrap_or(""),
                t.text
            )
        })
        .collect();
    render(DIALOG_EMOTION, &[("turns", blocks.join("\n")), ("count", turns.len().to_string())])
}
