//! Helpers shared by the integration tests.
#![allow(dead_code)]

use ihgrpo_core::tir::sandbox::{sandbox_execute, SandboxState};
use rand::Rng;

const VARS: [&str; 5] = ["a", "b", "c", "d", "e"];

fn operand<R: Rng>(rng: &mut R, defined: &[&str]) -> String {
    if !defined.is_empty() && rng.gen_bool(0.5) {
        defined[rng.gen_range(0..defined.len())].to_string()
    } else {
        rng.gen_range(0..50).to_string()
    }
}

fn expression<R: Rng>(rng: &mut R, defined: &[&str]) -> String {
    let mut e = operand(rng, defined);
    for _ in 0..rng.gen_range(0..3) {
        let op = ["+", "-", "*", "−"][rng.gen_range(0..4)];
        e = if rng.gen_bool(0.3) {
            format!("({e}) {op} {}", operand(rng, defined))
        } else {
            format!("{e} {op} {}", operand(rng, defined))
        };
    }
    if rng.gen_bool(0.2) {
        e = format!("({e}) / {}", rng.gen_range(1..9));
    }
    e
}

/// Random statements that run without error in sequence.
pub fn random_program<R: Rng>(rng: &mut R) -> Vec<String> {
    loop {
        let mut defined: Vec<&str> = Vec::new();
        let n = rng.gen_range(1..=12);
        let stmts: Vec<String> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.6) {
                    let v = VARS[rng.gen_range(0..VARS.len())];
                    let s = format!("{v} = {}", expression(rng, &defined));
                    if !defined.contains(&v) {
                        defined.push(v);
                    }
                    s
                } else {
                    format!("emit {}", expression(rng, &defined))
                }
            })
            .collect();
        if sandbox_execute(&mut SandboxState::default(), &stmts.join("\n")).is_ok() {
            return stmts;
        }
    }
}

/// Cuts `stmts` into `blocks` contiguous non-empty pieces (fewer when there
/// are fewer statements).
pub fn split_blocks<R: Rng>(rng: &mut R, stmts: &[String], blocks: usize) -> Vec<String> {
    let blocks = blocks.clamp(1, stmts.len());
    let mut cuts: Vec<usize> = (1..stmts.len()).collect();
    while cuts.len() > blocks - 1 {
        cuts.remove(rng.gen_range(0..cuts.len()));
    }
    let mut out = Vec::new();
    let mut start = 0;
    for end in cuts.into_iter().chain([stmts.len()]) {
        out.push(stmts[start..end].join("\n"));
        start = end;
    }
    out
}

/// Runs blocks one execution each and the merged program once; returns
/// (bindings, emissions) for both.
pub fn run_both(blocks: &[String]) -> ((SandboxState, Vec<i64>), (SandboxState, Vec<i64>)) {
    let mut split = SandboxState::default();
    let mut split_emitted = Vec::new();
    for b in blocks {
        split_emitted.extend(sandbox_execute(&mut split, b).expect("program is error free"));
    }
    let mut merged = SandboxState::default();
    let merged_emitted = sandbox_execute(&mut merged, &blocks.join("\n")).expect("program is error free");
    ((split, split_emitted), (merged, merged_emitted))
}
