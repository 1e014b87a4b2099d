//! Parsing of `--guidance` method strings into guidance specs.
//!
//! Grammar: `baseline` or `<mode>:<phrase>`, where mode is `prefill`,
//! `pseudo-prefill`, or `prompt`, and phrase is a catalog id (`cot`, `s2`,
//! `observe`, `artifacts-only`, `style-only`, `details`, `flaws`) or
//! `custom`, which takes its text from `--phrase`.

use aidet_core::{catalog_lookup, GuidanceMode, GuidanceSpec, PhraseKind};

/// Parses one method string. `custom_phrase` backs the `custom` phrase id.
pub fn parse_guidance(spec: &str, custom_phrase: Option<&str>) -> Result<GuidanceSpec, String> {
    if spec == "baseline" {
        return Ok(GuidanceSpec::baseline());
    }
    let (mode_str, phrase_id) = spec
        .split_once(':')
        .ok_or_else(|| format!("guidance {spec:?} is not \"baseline\" or \"<mode>:<phrase>\""))?;
    let mode = match mode_str {
        "prefill" => GuidanceMode::Prefill,
        "pseudo-prefill" => GuidanceMode::PseudoPrefill,
        "prompt" => GuidanceMode::Prompt,
        other => {
            return Err(format!(
                "unknown guidance mode {other:?} (expected prefill, pseudo-prefill, or prompt)"
            ))
        }
    };

    let (kind, text) = if phrase_id == "custom" {
        let text = custom_phrase
            .ok_or_else(|| format!("guidance {spec:?} needs --phrase for its text"))?;
        if text.is_empty() {
            return Err("--phrase must not be empty".into());
        }
        (PhraseKind::Variant, text.to_string())
    } else if mode == GuidanceMode::Prompt {
        // prompt-mode phrases are full sentences with their own wording
        let kind = match phrase_id {
            "cot" => PhraseKind::Cot,
            "s2" => PhraseKind::S2,
            other => return Err(format!("prompt mode has no phrase {other:?} (cot, s2, custom)")),
        };
        (kind, lookup("prompt", phrase_id)?)
    } else {
        match phrase_id {
            "cot" => (PhraseKind::Cot, lookup("cot", "default")?),
            "s2" => (PhraseKind::S2, lookup("s2", "default")?),
            other => (PhraseKind::Variant, lookup("variant", other)?),
        }
    };

    GuidanceSpec::new(mode, kind, phrase_id, text).map_err(|e| e.to_string())
}

fn lookup(kind: &str, id: &str) -> Result<String, String> {
    catalog_lookup(kind, id).map(str::to_string).map_err(|e| e.to_string())
}
