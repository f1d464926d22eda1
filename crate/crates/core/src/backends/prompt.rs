//! Translation instruction templates and prompt rendering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::TranslateRequest;

pub const SRC_LAN: &str = "{src_lan}";
pub const TRG_LAN: &str = "{trg_lan}";
pub const SRC_SENT: &str = "{src_sent}";

/// A translation instruction with `{src_lan}`, `{trg_lan}` and `{src_sent}`
/// placeholders.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub pattern: String,
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, pattern: impl Into<String>) -> Result<Self> {
        let tpl = Self { id: id.into(), pattern: pattern.into() };
        tpl.validate()?;
        Ok(tpl)
    }

    /// The sentence slot must appear exactly once; the language slots at
    /// least once (several mainstream instructions name each language twice).
    pub fn validate(&self) -> Result<()> {
        let missing = |placeholder| Error::MissingPlaceholder { id: self.id.clone(), placeholder };
        if self.pattern.matches(SRC_SENT).count() != 1 {
            return Err(missing(SRC_SENT));
        }
        if !self.pattern.contains(SRC_LAN) {
            return Err(missing(SRC_LAN));
        }
        if !self.pattern.contains(TRG_LAN) {
            return Err(missing(TRG_LAN));
        }
        Ok(())
    }

    /// Fills the placeholders in a single left-to-right pass, so text that
    /// itself looks like a placeholder is copied verbatim.
    pub fn fill(&self, src_lan: &str, trg_lan: &str, src_sent: &str) -> String {
        let mut out = String::with_capacity(self.pattern.len() + src_sent.len());
        let mut rest = self.pattern.as_str();
        while let Some(pos) = rest.find('{') {
            out.push_str(&rest[..pos]);
            let tail = &rest[pos..];
            let (value, skip) = if tail.starts_with(SRC_LAN) {
                (src_lan, SRC_LAN.len())
            } else if tail.starts_with(TRG_LAN) {
                (trg_lan, TRG_LAN.len())
            } else if tail.starts_with(SRC_SENT) {
                (src_sent, SRC_SENT.len())
            } else {
                ("{", 1)
            };
            out.push_str(value);
            rest = &tail[skip..];
        }
        out.push_str(rest);
        out
    }
}

/// The mainstream instruction set used for sampling during search.
pub fn default_templates() -> Vec<PromptTemplate> {
    let rows = [
        ("alma", "Translate this from {src_lan} to {trg_lan}:\n{src_lan}: {src_sent}\n{trg_lan}:"),
        (
            "tower",
            "Translate the following text from {src_lan} into {trg_lan}.\n{src_lan}: {src_sent}\n{trg_lan}:",
        ),
        ("please", "Please translate the {src_lan} into {trg_lan}: {src_sent}"),
        ("equals", "{src_lan}: {src_sent} = {trg_lan}:"),
        ("can-be-translated", "{src_sent} in {src_lan} can be translated to {trg_lan} as:"),
        ("newline", "{src_lan}: {src_sent}\n{trg_lan}:"),
        ("explain", "Explain the following {src_lan} sentence in {trg_lan}: {src_sent}"),
    ];
    rows.into_iter()
        .map(|(id, p)| PromptTemplate::new(id, p).expect("built-in template is valid"))
        .collect()
}

pub fn find_template<'a>(templates: &'a [PromptTemplate], id: &str) -> Result<&'a PromptTemplate> {
    templates
        .iter()
        .find(|t| t.id == id)
        .ok_or_else(|| Error::UnknownTemplate(id.to_string()))
}

/// Renders the full prompt: each exemplar as a completed instruction block,
/// in order, followed by the open instruction for the request text.
pub fn render_prompt(tpl: &PromptTemplate, req: &TranslateRequest) -> Result<String> {
    tpl.validate()?;
    let src = req.direction.src().display_name();
    let tgt = req.direction.tgt().display_name();
    let mut blocks = Vec::with_capacity(req.exemplars.len() + 1);
    for ex in &req.exemplars {
        let open = tpl.fill(src, tgt, &ex.src);
        let sep = if open.ends_with(':') { " " } else { "\n" };
        blocks.push(format!("{open}{sep}{}", ex.tgt));
    }
    blocks.push(tpl.fill(src, tgt, &req.text));
    Ok(blocks.join("\n\n"))
}
