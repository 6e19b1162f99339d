//! Byte-for-byte comparison of rendered prompts with the golden files.

use std::path::PathBuf;

use critedit::prompt::specimen_prompts;

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden")
}

pub const LITERAL_LINES: &[&str] = &[
    "Ranking (5, 4, 3, 2, or 1):",
    "Ranking (1 or 0):",
    "(if there are multiple inconsistent spans, give only one)",
    "Inconsistent summary: ",
    "Post-edited summary:",
];

/// Every rendered template equals its golden file, and the literal
/// instruction lines appear. Returns the number of files compared.
pub fn check_golden_prompts() -> Result<usize, String> {
    let rendered = specimen_prompts();
    if rendered.len() != 9 {
        return Err(format!("expected 7 editor strategies and 2 critic modes, got {}", rendered.len()));
    }
    for (name, text) in &rendered {
        let expected = std::fs::read_to_string(golden_dir().join(name)).map_err(|e| format!("{name}: {e}"))?;
        if *text != expected {
            let line = text
                .lines()
                .zip(expected.lines())
                .position(|(a, b)| a != b)
                .map_or("length".to_string(), |i| format!("line {}", i + 1));
            return Err(format!("{name} differs from golden file at {line}\n--- rendered ---\n{text}"));
        }
    }
    let all: String = rendered.iter().map(|(_, t)| t.as_str()).collect();
    if let Some(missing) = LITERAL_LINES.iter().find(|l| !all.contains(*l)) {
        return Err(format!("missing literal line {missing:?}"));
    }
    Ok(rendered.len())
}
