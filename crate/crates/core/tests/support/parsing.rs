//! Editor-response parsing checks: generated round trips, refusals and a
//! recorded multi-section response.

use std::collections::BTreeSet;

use critedit::parse::{parse_editor, render_editor_output, EditorOutput, ParseStatus};
use critedit::prompt::{EditorStrategy, Section};
use critedit::ErrorType;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

pub const ROUND_ONE_RESPONSE: &str = "Predicted error span: The article mentions that Dagenham & Redbridge won the \
match, not that they lost and Leyton Orient was relegated.\n\
Post-edited summary:\n\
Dagenham & Redbridge kept their survival hopes alive in the National League after winning against Leyton Orient.";

pub const REFUSALS: &[&str] = &[
    "I'm sorry, but I cannot help with editing this summary.",
    "I am sorry, I can't do that.",
    "As an AI language model, I am unable to verify the facts in this article.",
    "I apologize, but I won't rewrite news content.",
    "Unfortunately I can not complete this request.",
    "I will not produce an edited summary for this article.",
    "",
    "   \n\n  ",
];

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec("[A-Za-z][a-z]{0,8}", 1..12).prop_map(|w| format!("{}.", w.join(" ")))
}

fn types() -> impl Strategy<Value = BTreeSet<ErrorType>> {
    prop::collection::btree_set(prop::sample::select(ErrorType::ALL.to_vec()), 1..4)
}

/// A well-formed editor output carrying exactly the sections its strategy
/// asks for.
pub fn editor_output() -> impl Strategy<Value = (EditorStrategy, EditorOutput)> {
    (
        prop::sample::select(EditorStrategy::ALL.to_vec()),
        sentence(),
        types(),
        prop::collection::vec(sentence(), 1..3),
        sentence(),
    )
        .prop_map(|(strategy, span, types, summary, reasoning)| {
            let footer = strategy.footer();
            let has = |s| footer.contains(&s);
            let out = EditorOutput {
                span: has(Section::Span).then_some(span),
                error_types: has(Section::ErrorTypes).then_some(types),
                edited_summary: summary.join(" "),
                reasoning: has(Section::Reasoning).then_some(reasoning),
                parse_status: ParseStatus::Clean,
                raw: String::new(),
            };
            (strategy, out)
        })
}

pub fn round_trip(strategy: EditorStrategy, expected: &EditorOutput) -> Result<(), TestCaseError> {
    let text = render_editor_output(expected, strategy);
    let parsed = parse_editor(&text, strategy);
    prop_assert_eq!(parsed.parse_status, ParseStatus::Clean);
    prop_assert_eq!(&parsed.span, &expected.span);
    prop_assert_eq!(&parsed.error_types, &expected.error_types);
    prop_assert_eq!(&parsed.edited_summary, &expected.edited_summary);
    prop_assert_eq!(&parsed.reasoning, &expected.reasoning);
    Ok(())
}

pub fn check_round_trips(cases: u32) -> Result<u32, String> {
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    runner.run(&editor_output(), |(strategy, expected)| round_trip(strategy, &expected)).map_err(|e| e.to_string())?;
    Ok(cases)
}

pub fn check_refusals() -> Result<usize, String> {
    let mut n = 0;
    for strategy in EditorStrategy::ALL {
        for text in REFUSALS {
            let out = parse_editor(text, strategy);
            if out.parse_status != ParseStatus::Failed || out.is_usable() {
                return Err(format!("{strategy}: {text:?} was not classified as failed"));
            }
            n += 1;
        }
    }
    Ok(n)
}

pub fn check_round_one_response() -> Result<(), String> {
    let out = parse_editor(ROUND_ONE_RESPONSE, EditorStrategy::EditorSpan);
    let span = "The article mentions that Dagenham & Redbridge won the match, not that they lost and Leyton Orient \
                was relegated.";
    if out.parse_status != ParseStatus::Clean || out.span.as_deref() != Some(span) {
        return Err(format!("span not recovered: {out:?}"));
    }
    if !out.edited_summary.starts_with("Dagenham & Redbridge kept their survival hopes alive")
        || !out.edited_summary.ends_with("against Leyton Orient.")
    {
        return Err(format!("summary not recovered: {:?}", out.edited_summary));
    }
    Ok(())
}

pub fn check_parser_suite() -> Result<String, String> {
    let cases = check_round_trips(1000)?;
    let refusals = check_refusals()?;
    check_round_one_response()?;
    Ok(format!("{cases} round trips, {refusals} refusal checks, recorded response"))
}
