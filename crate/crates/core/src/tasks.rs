//! Procedurally generated tasks with exact-match verifiers.
//!
//! All tasks share one vocabulary so a single policy can train on any mix.
//! A completion may contain free-form "reasoning" tokens before the answer
//! marker; only the symbols after the last marker are checked.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VigorError};
use crate::io::write_atomic;
use crate::model::{Token, BOS, EOS, PAD};

pub const ANS: Token = 3;
pub const THINK: Token = 4;
pub const DIGIT0: Token = 5;
pub const PLUS: Token = 15;
pub const EQ: Token = 16;
pub const REV: Token = 17;
pub const SORT: Token = 18;
pub const LETTER_A: Token = 19;
pub const NUM_LETTERS: usize = 10;
/// Size of the shared task vocabulary.
pub const VOCAB_SIZE: usize = LETTER_A as usize + NUM_LETTERS;

/// Modulus used by `mod_add`.
pub const MODULUS: u32 = 100;

/// Text form of a token.
pub fn token_text(t: Token) -> String {
    match t {
        PAD => "<pad>".into(),
        BOS => "<bos>".into(),
        EOS => "<eos>".into(),
        ANS => "<ans>".into(),
        THINK => ".".into(),
        PLUS => "+".into(),
        EQ => "=".into(),
        REV => "<rev>".into(),
        SORT => "<sort>".into(),
        t if (DIGIT0..DIGIT0 + 10).contains(&t) => ((b'0' + (t - DIGIT0) as u8) as char).into(),
        t if (LETTER_A..LETTER_A + NUM_LETTERS as Token).contains(&t) => {
            ((b'a' + (t - LETTER_A) as u8) as char).into()
        }
        t => format!("<{t}>"),
    }
}

/// Space-separated text rendering of a token sequence.
pub fn render(tokens: &[Token]) -> String {
    tokens
        .iter()
        .map(|&t| token_text(t))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Token for a task symbol (`0-9`, `a-j`).
pub fn symbol_token(c: char) -> Option<Token> {
    match c {
        '0'..='9' => Some(DIGIT0 + (c as u8 - b'0') as Token),
        'a'..='j' => Some(LETTER_A + (c as u8 - b'a') as Token),
        _ => None,
    }
}

fn token_symbol(t: Token) -> Option<char> {
    match t {
        t if (DIGIT0..DIGIT0 + 10).contains(&t) => Some((b'0' + (t - DIGIT0) as u8) as char),
        t if (LETTER_A..LETTER_A + NUM_LETTERS as Token).contains(&t) => {
            Some((b'a' + (t - LETTER_A) as u8) as char)
        }
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// `a + b mod 100` with `difficulty`-digit operands (1..=4).
    ModAdd,
    /// Reverse a string of `difficulty` letters (1..=8).
    Reverse,
    /// Sort `difficulty` digits ascending (1..=8).
    SortDigits,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::ModAdd, TaskKind::Reverse, TaskKind::SortDigits];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::ModAdd => "mod_add",
            TaskKind::Reverse => "reverse",
            TaskKind::SortDigits => "sort_digits",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| VigorError::Config(format!("unknown task kind `{s}`")))
    }

    pub fn difficulty_range(self) -> std::ops::RangeInclusive<u32> {
        match self {
            TaskKind::ModAdd => 1..=4,
            TaskKind::Reverse | TaskKind::SortDigits => 1..=8,
        }
    }

    /// Tokens an answer is written in.
    pub fn answer_symbols(self) -> std::ops::Range<Token> {
        match self {
            TaskKind::Reverse => LETTER_A..LETTER_A + NUM_LETTERS as Token,
            TaskKind::ModAdd | TaskKind::SortDigits => DIGIT0..DIGIT0 + 10,
        }
    }

    /// Longest canonical answer at `difficulty`, in symbols.
    pub fn max_answer_len(self, difficulty: u32) -> usize {
        match self {
            TaskKind::ModAdd => 2,
            _ => difficulty as usize,
        }
    }

    /// Longest prompt at `difficulty`, in tokens.
    pub fn max_prompt_len(self, difficulty: u32) -> usize {
        let d = difficulty as usize;
        match self {
            TaskKind::ModAdd => 2 * d + 3,
            _ => d + 3,
        }
    }

    fn index(self) -> u64 {
        match self {
            TaskKind::ModAdd => 0,
            TaskKind::Reverse => 1,
            TaskKind::SortDigits => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskInstance {
    pub kind: TaskKind,
    pub prompt_tokens: Vec<Token>,
    pub canonical_answer: String,
    pub difficulty: u32,
}

impl TaskInstance {
    /// Canonical response: `think` reasoning tokens, the marker, the answer, EOS.
    pub fn solution_tokens(&self, think: usize) -> Vec<Token> {
        let mut out = vec![THINK; think];
        out.push(ANS);
        out.extend(self.canonical_answer.chars().filter_map(symbol_token));
        out.push(EOS);
        out
    }

    /// Tokens needed for the shortest correct response.
    pub fn min_response_len(&self) -> usize {
        self.canonical_answer.len() + 2
    }
}

fn digits_of(n: u32) -> Vec<Token> {
    n.to_string().chars().filter_map(symbol_token).collect()
}

fn check_difficulty(kind: TaskKind, difficulty: u32) -> Result<()> {
    if !kind.difficulty_range().contains(&difficulty) {
        return Err(VigorError::Config(format!(
            "difficulty {difficulty} outside {:?} for {}",
            kind.difficulty_range(),
            kind.name()
        )));
    }
    Ok(())
}

/// Builds a `mod_add` instance from explicit operands.
pub fn mod_add_instance(a: u32, b: u32, difficulty: u32) -> Result<TaskInstance> {
    check_difficulty(TaskKind::ModAdd, difficulty)?;
    let bound = 10u32.pow(difficulty);
    if a >= bound || b >= bound {
        return Err(VigorError::Config(format!(
            "operands {a}, {b} exceed {difficulty} digits"
        )));
    }
    let mut prompt = vec![BOS];
    prompt.extend(digits_of(a));
    prompt.push(PLUS);
    prompt.extend(digits_of(b));
    prompt.push(EQ);
    Ok(TaskInstance {
        kind: TaskKind::ModAdd,
        prompt_tokens: prompt,
        canonical_answer: ((a + b) % MODULUS).to_string(),
        difficulty,
    })
}

/// Builds a `reverse` or `sort_digits` instance from its input string.
pub fn string_instance(kind: TaskKind, input: &str) -> Result<TaskInstance> {
    let difficulty = input.chars().count() as u32;
    check_difficulty(kind, difficulty)?;
    let (op, valid): (Token, fn(char) -> bool) = match kind {
        TaskKind::Reverse => (REV, |c| ('a'..='j').contains(&c)),
        TaskKind::SortDigits => (SORT, |c| c.is_ascii_digit()),
        TaskKind::ModAdd => {
            return Err(VigorError::Config(
                "mod_add takes operands, not a string".into(),
            ))
        }
    };
    if !input.chars().all(valid) {
        return Err(VigorError::Config(format!(
            "invalid input `{input}` for {}",
            kind.name()
        )));
    }
    let mut prompt = vec![BOS, op];
    prompt.extend(input.chars().filter_map(symbol_token));
    prompt.push(EQ);
    let canonical_answer = match kind {
        TaskKind::Reverse => input.chars().rev().collect(),
        _ => {
            let mut cs: Vec<char> = input.chars().collect();
            cs.sort_unstable();
            cs.into_iter().collect()
        }
    };
    Ok(TaskInstance {
        kind,
        prompt_tokens: prompt,
        canonical_answer,
        difficulty,
    })
}

pub fn generate_instance<R: Rng + ?Sized>(
    kind: TaskKind,
    difficulty: u32,
    rng: &mut R,
) -> Result<TaskInstance> {
    check_difficulty(kind, difficulty)?;
    match kind {
        TaskKind::ModAdd => {
            let bound = 10u32.pow(difficulty);
            let a = rng.gen_range(0..bound);
            let b = rng.gen_range(0..bound);
            mod_add_instance(a, b, difficulty)
        }
        TaskKind::Reverse => {
            let s: String = (0..difficulty)
                .map(|_| (b'a' + rng.gen_range(0..NUM_LETTERS as u8)) as char)
                .collect();
            string_instance(kind, &s)
        }
        TaskKind::SortDigits => {
            let s: String = (0..difficulty)
                .map(|_| (b'0' + rng.gen_range(0..10u8)) as char)
                .collect();
            string_instance(kind, &s)
        }
    }
}

/// Recomputes the canonical answer from prompt tokens alone.
pub fn solve(kind: TaskKind, prompt: &[Token]) -> Result<String> {
    let bad = || {
        VigorError::Format(format!(
            "malformed {} prompt: {}",
            kind.name(),
            render(prompt)
        ))
    };
    if prompt.first() != Some(&BOS) || prompt.last() != Some(&EQ) {
        return Err(bad());
    }
    let body = &prompt[1..prompt.len() - 1];
    match kind {
        TaskKind::ModAdd => {
            let plus = body.iter().position(|&t| t == PLUS).ok_or_else(bad)?;
            let num = |ts: &[Token]| -> Result<u32> {
                let s: String = ts
                    .iter()
                    .map(|&t| token_symbol(t))
                    .collect::<Option<_>>()
                    .ok_or_else(bad)?;
                s.parse().map_err(|_| bad())
            };
            let a = num(&body[..plus])?;
            let b = num(&body[plus + 1..])?;
            Ok(((a + b) % MODULUS).to_string())
        }
        TaskKind::Reverse | TaskKind::SortDigits => {
            let op = if kind == TaskKind::Reverse { REV } else { SORT };
            if body.first() != Some(&op) {
                return Err(bad());
            }
            let s: String = body[1..]
                .iter()
                .map(|&t| token_symbol(t))
                .collect::<Option<_>>()
                .ok_or_else(bad)?;
            Ok(string_instance(kind, &s)?.canonical_answer)
        }
    }
}

/// Symbols following the last answer marker, ignoring whitespace and stopping
/// at the first non-symbol token. `None` when the marker is absent or no
/// symbol follows it.
pub fn extract_answer(completion_text: &str) -> Option<String> {
    let marker = token_text(ANS);
    let at = completion_text.rfind(&marker)?;
    let mut out = String::new();
    for c in completion_text[at + marker.len()..].chars() {
        if c.is_whitespace() {
            continue;
        }
        if symbol_token(c).is_some() {
            out.push(c);
        } else {
            break;
        }
    }
    (!out.is_empty()).then_some(out)
}

/// Strict exact match of the extracted answer against the canonical one.
pub fn verify(instance: &TaskInstance, completion_text: &str) -> bool {
    extract_answer(completion_text).as_deref() == Some(instance.canonical_answer.as_str())
}

/// Token-level form of [`verify`] for completions that are still token ids.
pub fn verify_tokens(instance: &TaskInstance, completion: &[Token]) -> bool {
    verify(instance, &render(completion))
}

/// 64-bit FNV-1a over token ids; decides the train/eval partition.
fn fingerprint(tokens: &[Token]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &t in tokens {
        for b in t.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Split an instance belongs to. One in five distinct prompts is held out.
pub fn split_of(instance: &TaskInstance) -> Split {
    if fingerprint(&instance.prompt_tokens).is_multiple_of(5) {
        Split::Eval
    } else {
        Split::Train
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub kind: TaskKind,
    pub difficulty: u32,
    pub seed: u64,
    pub split: Split,
    pub instances: Vec<TaskInstance>,
}

#[derive(Serialize, Deserialize)]
struct DatasetRecord {
    kind: TaskKind,
    difficulty: u32,
    prompt: Vec<Token>,
    answer: String,
    seed: u64,
    split: Split,
}

/// Deterministic dataset. Train and eval use separate rng streams and are
/// disjoint by construction: each prompt belongs to exactly one split.
pub fn make_dataset(
    kind: TaskKind,
    n: usize,
    difficulty: u32,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    if n == 0 {
        return Err(VigorError::Config("dataset size must be at least 1".into()));
    }
    check_difficulty(kind, difficulty)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(kind.index() * 2 + split as u64);
    let mut instances = Vec::with_capacity(n);
    let mut misses = 0usize;
    while instances.len() < n {
        let inst = generate_instance(kind, difficulty, &mut rng)?;
        if split_of(&inst) == split {
            instances.push(inst);
        } else {
            misses += 1;
            if misses > 1000 * n + 10_000 {
                return Err(VigorError::Config(format!(
                    "cannot draw {n} {:?} instances of {} at difficulty {difficulty}",
                    split,
                    kind.name()
                )));
            }
        }
    }
    Ok(Dataset {
        kind,
        difficulty,
        seed,
        split,
        instances,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for inst in &self.instances {
            let rec = DatasetRecord {
                kind: inst.kind,
                difficulty: inst.difficulty,
                prompt: inst.prompt_tokens.clone(),
                answer: inst.canonical_answer.clone(),
                seed: self.seed,
                split: self.split,
            };
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Parses line-delimited records, rejecting answers that disagree with their prompt.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut recs = Vec::new();
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let rec: DatasetRecord = serde_json::from_str(line)
                .map_err(|e| VigorError::Format(format!("dataset line {}: {e}", i + 1)))?;
            recs.push(rec);
        }
        let first = recs
            .first()
            .ok_or_else(|| VigorError::Format("empty dataset file".into()))?;
        let (kind, difficulty, seed, split) =
            (first.kind, first.difficulty, first.seed, first.split);
        let mut instances = Vec::with_capacity(recs.len());
        for rec in recs {
            if rec.kind != kind || rec.difficulty != difficulty {
                return Err(VigorError::Format(
                    "mixed kinds or difficulties in one dataset".into(),
                ));
            }
            let solved = solve(rec.kind, &rec.prompt)?;
            if solved != rec.answer {
                return Err(VigorError::Format(format!(
                    "answer `{}` does not match prompt (expected `{solved}`)",
                    rec.answer
                )));
            }
            instances.push(TaskInstance {
                kind: rec.kind,
                prompt_tokens: rec.prompt,
                canonical_answer: rec.answer,
                difficulty: rec.difficulty,
            });
        }
        Ok(Self {
            kind,
            difficulty,
            seed,
            split,
            instances,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn mod_add_answer() {
        let inst = mod_add_instance(17, 25, 2).unwrap();
        assert_eq!(inst.canonical_answer, "42");
        assert_eq!(render(&inst.prompt_tokens), "<bos> 1 7 + 2 5 =");
        assert_eq!(mod_add_instance(60, 45, 2).unwrap().canonical_answer, "5");
    }

    #[test]
    fn string_task_answers() {
        assert_eq!(
            string_instance(TaskKind::Reverse, "abc")
                .unwrap()
                .canonical_answer,
            "cba"
        );
        assert_eq!(
            string_instance(TaskKind::SortDigits, "3142")
                .unwrap()
                .canonical_answer,
            "1234"
        );
    }

    #[test]
    fn difficulty_out_of_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            generate_instance(TaskKind::ModAdd, 5, &mut rng),
            Err(VigorError::Config(_))
        ));
        assert!(generate_instance(TaskKind::Reverse, 0, &mut rng).is_err());
    }

    #[test]
    fn extraction_rules() {
        assert_eq!(extract_answer(". . <ans> 4 2 <eos>").as_deref(), Some("42"));
        assert_eq!(extract_answer("1 2 3 <eos>"), None);
        assert_eq!(
            extract_answer("<ans> 1 <ans> 7 <eos>").as_deref(),
            Some("7")
        );
        assert_eq!(extract_answer("<ans> <eos>"), None);
    }

    #[test]
    fn strict_verification() {
        let inst = mod_add_instance(17, 25, 2).unwrap();
        assert!(verify(&inst, "<ans> 42"));
        assert!(verify(&inst, ". <ans> 4 2 <eos>"));
        assert!(!verify(&inst, "<ans> 042"));
        assert!(!verify(&inst, "<ans> 24"));
        assert!(!verify(&inst, "42"));
    }

    #[test]
    fn every_generated_instance_verifies_its_own_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in TaskKind::ALL {
            for d in kind.difficulty_range() {
                for _ in 0..50 {
                    let inst = generate_instance(kind, d, &mut rng).unwrap();
                    assert!(verify_tokens(&inst, &inst.solution_tokens(2)));
                    assert_eq!(
                        solve(kind, &inst.prompt_tokens).unwrap(),
                        inst.canonical_answer
                    );
                    assert!(inst.prompt_tokens.len() <= kind.max_prompt_len(d));
                    assert!(inst.canonical_answer.len() <= kind.max_answer_len(d));
                    assert!(inst
                        .prompt_tokens
                        .iter()
                        .all(|&t| (t as usize) < VOCAB_SIZE));
                }
            }
        }
    }

    #[test]
    fn datasets_are_reproducible() {
        let a = make_dataset(TaskKind::ModAdd, 100, 2, 1, Split::Train).unwrap();
        let b = make_dataset(TaskKind::ModAdd, 100, 2, 1, Split::Train).unwrap();
        assert_eq!(a, b);
        let one = make_dataset(TaskKind::Reverse, 1, 3, 1, Split::Eval).unwrap();
        assert_eq!(one.len(), 1);
        assert!(make_dataset(TaskKind::ModAdd, 0, 2, 1, Split::Train).is_err());
    }

    #[test]
    fn train_and_eval_share_nothing() {
        let train = make_dataset(TaskKind::ModAdd, 1000, 2, 1, Split::Train).unwrap();
        let eval = make_dataset(TaskKind::ModAdd, 1000, 2, 1, Split::Eval).unwrap();
        let seen: HashSet<_> = train.instances.iter().map(|i| &i.prompt_tokens).collect();
        assert_eq!(
            eval.instances
                .iter()
                .filter(|i| seen.contains(&i.prompt_tokens))
                .count(),
            0
        );
    }

    #[test]
    fn jsonl_roundtrip_and_validation() {
        let ds = make_dataset(TaskKind::SortDigits, 20, 4, 9, Split::Eval).unwrap();
        let text = ds.to_jsonl().unwrap();
        assert_eq!(text.lines().count(), 20);
        assert_eq!(Dataset::from_jsonl(&text).unwrap(), ds);
        let tampered = text.replacen("\"answer\":\"", "\"answer\":\"9", 1);
        assert!(Dataset::from_jsonl(&tampered).is_err());
    }
}
