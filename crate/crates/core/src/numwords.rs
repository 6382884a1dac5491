//! Written-form normalization: number words to digit strings.
//!
//! A compositional grammar over English and Persian number words covering
//! 0 to 999,999. A number word run is rewritten only when it parses as a
//! whole; everything else passes through untouched. Larger scale words
//! (million and up) are not part of the grammar and are left as text.

use crate::text::normalize_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Word {
    Zero,
    Unit(u32),
    Teen(u32),
    Tens(u32),
    /// A single word worth whole hundreds ("دویست").
    Hundreds(u32),
    /// "hundred" multiplier.
    Hundred,
    Thousand,
    And,
}

fn lookup(token: &str) -> Option<Word> {
    use Word::*;
    let w = match token {
        "zero" | "صفر" => Zero,
        "one" | "یک" => Unit(1),
        "two" | "دو" => Unit(2),
        "three" | "سه" => Unit(3),
        "four" | "چهار" => Unit(4),
        "five" | "پنج" => Unit(5),
        "six" | "شش" | "شیش" => Unit(6),
        "seven" | "هفت" => Unit(7),
        "eight" | "هشت" => Unit(8),
        "nine" | "نه" => Unit(9),
        "ten" | "ده" => Teen(10),
        "eleven" | "یازده" => Teen(11),
        "twelve" | "دوازده" => Teen(12),
        "thirteen" | "سیزده" => Teen(13),
        "fourteen" | "چهارده" => Teen(14),
        "fifteen" | "پانزده" | "پونزده" => Teen(15),
        "sixteen" | "شانزده" | "شونزده" => Teen(16),
        "seventeen" | "هفده" => Teen(17),
        "eighteen" | "هجده" | "هیجده" => Teen(18),
        "nineteen" | "نوزده" => Teen(19),
        "twenty" | "بیست" => Tens(20),
        "thirty" | "سی" => Tens(30),
        "forty" | "چهل" => Tens(40),
        "fifty" | "پنجاه" => Tens(50),
        "sixty" | "شصت" => Tens(60),
        "seventy" | "هفتاد" => Tens(70),
        "eighty" | "هشتاد" => Tens(80),
        "ninety" | "نود" => Tens(90),
        "صد" | "یکصد" => Hundreds(100),
        "دویست" => Hundreds(200),
        "سیصد" => Hundreds(300),
        "چهارصد" => Hundreds(400),
        "پانصد" => Hundreds(500),
        "ششصد" => Hundreds(600),
        "هفتصد" => Hundreds(700),
        "هشتصد" => Hundreds(800),
        "نهصد" => Hundreds(900),
        "hundred" => Hundred,
        "thousand" | "هزار" => Thousand,
        "and" | "و" => And,
        _ => return None,
    };
    Some(w)
}

/// Position within a below-thousand group. Each word must land in a slot
/// strictly lower than the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Slot {
    Units = 0,
    Tens = 1,
    Hundreds = 2,
    Open = 3,
}

#[derive(Debug, Clone, Copy)]
struct Parser {
    total: u32,
    group: u32,
    slot: Slot,
    saw_thousand: bool,
    zero: bool,
    words: usize,
    pending_and: bool,
}

impl Parser {
    fn new() -> Self {
        Parser {
            total: 0,
            group: 0,
            slot: Slot::Open,
            saw_thousand: false,
            zero: false,
            words: 0,
            pending_and: false,
        }
    }

    fn group_empty(&self) -> bool {
        self.slot == Slot::Open
    }

    /// Feed one word; `false` means the run cannot continue with it.
    fn feed(&mut self, word: Word) -> bool {
        if self.zero {
            return false;
        }
        if word == Word::And {
            // Only between two number words.
            if self.words == 0 || self.pending_and {
                return false;
            }
            self.pending_and = true;
            return true;
        }
        let ok = match word {
            Word::Zero => self.words == 0,
            Word::Unit(v) => self.fill(Slot::Units, v),
            Word::Teen(v) => self.slot > Slot::Tens && self.fill(Slot::Units, v),
            Word::Tens(v) => self.fill(Slot::Tens, v),
            Word::Hundreds(v) => self.fill(Slot::Hundreds, v),
            Word::Hundred => {
                if self.slot == Slot::Units && self.group < 10 && !self.pending_and {
                    self.group *= 100;
                    self.slot = Slot::Hundreds;
                    true
                } else if self.group_empty() && !self.pending_and {
                    self.group = 100;
                    self.slot = Slot::Hundreds;
                    true
                } else {
                    false
                }
            }
            Word::Thousand => {
                if self.saw_thousand || self.pending_and {
                    false
                } else {
                    self.total = self.group.max(1) * 1000;
                    self.group = 0;
                    self.slot = Slot::Open;
                    self.saw_thousand = true;
                    true
                }
            }
            Word::And => unreachable!(),
        };
        if ok {
            if word == Word::Zero {
                self.zero = true;
            }
            self.words += 1;
            self.pending_and = false;
        }
        ok
    }

    fn fill(&mut self, slot: Slot, value: u32) -> bool {
        if slot >= self.slot {
            return false;
        }
        self.group += value;
        self.slot = slot;
        true
    }

    fn complete(&self) -> bool {
        self.words > 0 && !self.pending_and
    }

    fn value(&self) -> u32 {
        self.total + self.group
    }
}

/// Longest run of tokens starting at `tokens[0]` that parses as a number,
/// as (tokens consumed, value).
fn longest_number(tokens: &[String]) -> Option<(usize, u32)> {
    let mut parser = Parser::new();
    let mut best = None;
    for (i, token) in tokens.iter().enumerate() {
        let Some(word) = lookup(token) else { break };
        if !parser.feed(word) {
            break;
        }
        if parser.complete() {
            best = Some((i + 1, parser.value()));
        }
    }
    best
}

/// Split a word on internal hyphens when every piece is a number word,
/// so "twenty-one" parses like "twenty one".
fn split_token(token: &str) -> Vec<String> {
    let lower = token.to_lowercase();
    if lower.contains('-') {
        let parts: Vec<&str> = lower.split('-').collect();
        if parts.iter().all(|p| lookup(p).is_some_and(|w| w != Word::And)) {
            return parts.into_iter().map(str::to_string).collect();
        }
    }
    vec![lower]
}

/// Rewrite every number-word run in `s` as digits; other words are kept.
/// Idempotent, and digit strings pass through unchanged.
pub fn normalize_written_form(s: &str) -> String {
    let normalized = normalize_text(s);
    if normalized.is_empty() {
        return normalized;
    }
    let mut originals: Vec<String> = Vec::new();
    let mut keys: Vec<String> = Vec::new();
    for word in normalized.split(' ') {
        let pieces = split_token(word);
        if pieces.len() > 1 {
            originals.extend(pieces.iter().cloned());
            keys.extend(pieces);
        } else {
            originals.push(word.to_string());
            keys.push(pieces.into_iter().next().unwrap_or_default());
        }
    }
    let mut out: Vec<String> = Vec::with_capacity(keys.len());
    let mut i = 0;
    while i < keys.len() {
        match longest_number(&keys[i..]) {
            Some((used, value)) => {
                out.push(value.to_string());
                i += used;
            }
            None => {
                out.push(originals[i].clone());
                i += 1;
            }
        }
    }
    out.join(" ")
}

/// True when `s` is a non-empty run of ASCII digits.
pub fn is_digits_only(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())
}

/// English words for `n` in 0..1_000_000, e.g. "one hundred and five".
/// Used to exercise the grammar.
pub fn english_words(n: u32) -> String {
    const UNITS: [&str; 20] = [
        "zero",
        "one",
        "two",
        "three",
        "four",
        "five",
        "six",
        "seven",
        "eight",
        "nine",
        "ten",
        "eleven",
        "twelve",
        "thirteen",
        "fourteen",
        "fifteen",
        "sixteen",
        "seventeen",
        "eighteen",
        "nineteen",
    ];
    const TENS: [&str; 10] = [
        "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
    ];
    fn below_thousand(n: u32, out: &mut Vec<String>) {
        let (h, rest) = (n / 100, n % 100);
        if h > 0 {
            out.push(UNITS[h as usize].into());
            out.push("hundred".into());
            if rest > 0 {
                out.push("and".into());
            }
        }
        if rest >= 20 {
            out.push(TENS[(rest / 10) as usize].into());
            if rest % 10 > 0 {
                out.push(UNITS[(rest % 10) as usize].into());
            }
        } else if rest > 0 {
            out.push(UNITS[rest as usize].into());
        }
    }
    assert!(n < 1_000_000, "outside the grammar");
    if n == 0 {
        return "zero".into();
    }
    let mut out = Vec::new();
    if n >= 1000 {
        below_thousand(n / 1000, &mut out);
        out.push("thousand".into());
    }
    below_thousand(n % 1000, &mut out);
    out.join(" ")
}

/// Persian words for `n` in 0..1_000_000, joined with "و".
pub fn persian_words(n: u32) -> String {
    const UNITS: [&str; 20] = [
        "صفر",
        "یک",
        "دو",
        "سه",
        "چهار",
        "پنج",
        "شش",
        "هفت",
        "هشت",
        "نه",
        "ده",
        "یازده",
        "دوازده",
        "سیزده",
        "چهارده",
        "پانزده",
        "شانزده",
        "هفده",
        "هجده",
        "نوزده",
    ];
    const TENS: [&str; 10] = ["", "", "بیست", "سی", "چهل", "پنجاه", "شصت", "هفتاد", "هشتاد", "نود"];
    const HUNDREDS: [&str; 10] = [
        "",
        "صد",
        "دویست",
        "سیصد",
        "چهارصد",
        "پانصد",
        "ششصد",
        "هفتصد",
        "هشتصد",
        "نهصد",
    ];
    fn below_thousand(n: u32) -> Vec<&'static str> {
        let mut parts = Vec::new();
        if n >= 100 {
            parts.push(HUNDREDS[(n / 100) as usize]);
        }
        let rest = n % 100;
        if rest >= 20 {
            parts.push(TENS[(rest / 10) as usize]);
            if rest % 10 > 0 {
                parts.push(UNITS[(rest % 10) as usize]);
            }
        } else if rest > 0 {
            parts.push(UNITS[rest as usize]);
        }
        parts
    }
    assert!(n < 1_000_000, "outside the grammar");
    if n == 0 {
        return UNITS[0].into();
    }
    let mut groups: Vec<String> = Vec::new();
    if n >= 1000 {
        let head = below_thousand(n / 1000).join(" و ");
        groups.push(format!("{head} هزار"));
    }
    if n % 1000 > 0 {
        groups.push(below_thousand(n % 1000).join(" و "));
    }
    groups.join(" و ")
}
