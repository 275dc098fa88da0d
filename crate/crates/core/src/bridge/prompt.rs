use super::BridgeError;

/// Version tag of [`PROMPT_TEMPLATE`]; bump on any wording change so
/// cached remote replies are not reused across templates.
pub const PROMPT_VERSION: u32 = 1;
pub const ANSWER_OPEN: &str = "<transcription>";
pub const ANSWER_CLOSE: &str = "</transcription>";

/// `{language}` and `{roman}` are substituted verbatim.
pub const PROMPT_TEMPLATE: &str = "Convert the following romanized text into {language} written in its native script. \
Keep the words in the same order and do not translate. \
Reply with the converted text only, enclosed in <transcription></transcription>.\n\
Romanized text: {roman}";

/// Fills the instruction template for `target_lang`, which must be one of
/// `registered` (pairs of language code and display name).
pub fn build_prompt(roman: &str, target_lang: &str, registered: &[(String, String)]) -> Result<String, BridgeError> {
    let name = registered
        .iter()
        .find(|(code, _)| code == target_lang)
        .map(|(_, name)| name.as_str())
        .ok_or_else(|| BridgeError::UnknownLanguage(target_lang.to_string()))?;
    Ok(PROMPT_TEMPLATE.replace("{language}", name).replace("{roman}", roman))
}

/// Text between the answer sentinels, trimmed.
pub fn extract_answer(reply: &str) -> Result<String, BridgeError> {
    let start = reply
        .find(ANSWER_OPEN)
        .ok_or_else(|| BridgeError::BackendRefusal(truncate(reply)))?
        + ANSWER_OPEN.len();
    let len = reply[start..]
        .find(ANSWER_CLOSE)
        .ok_or_else(|| BridgeError::BackendRefusal(truncate(reply)))?;
    Ok(reply[start..start + len].trim().to_string())
}

fn truncate(s: &str) -> String {
    s.chars().take(120).collect()
}
