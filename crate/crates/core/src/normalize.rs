//! Canonical form for name keys.

use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// Uppercases, transliterates Latin diacritics to ASCII, trims, and
/// collapses internal whitespace runs to a single space. Hyphens and
/// apostrophes are kept.
///
/// Idempotent: `normalize_name(&normalize_name(x)) == normalize_name(x)`.
pub fn normalize_name(raw: &str) -> String {
    let upper = raw.to_uppercase();
    let mut folded = String::with_capacity(upper.len());
    for c in upper.nfd() {
        if is_combining_mark(c) {
            continue;
        }
        match fold_letter(c) {
            Some(s) => folded.push_str(s),
            None => folded.push(c),
        }
    }
    let mut out = String::with_capacity(folded.len());
    for word in folded.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

// Latin letters with no canonical decomposition.
fn fold_letter(c: char) -> Option<&'static str> {
    Some(match c {
        'ß' | 'ẞ' => "SS",
        'Æ' => "AE",
        'Œ' => "OE",
        'Ø' => "O",
        'Đ' | 'Ð' => "D",
        'Ł' => "L",
        'Þ' => "TH",
        'Ħ' => "H",
        'Ŀ' => "L",
        'Ŧ' => "T",
        'Ŋ' => "NG",
        'ı' => "I",
        '\u{2019}' | '\u{2018}' | '`' => "'",
        '\u{2010}' | '\u{2011}' | '\u{2012}' | '\u{2013}' => "-",
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn folds_case_accents_and_whitespace() {
        assert_eq!(normalize_name("García "), "GARCIA");
        assert_eq!(normalize_name("  de   la  Cruz\t"), "DE LA CRUZ");
        assert_eq!(normalize_name("Núñez"), "NUNEZ");
        assert_eq!(normalize_name("Strauß"), "STRAUSS");
        assert_eq!(normalize_name("Łukasz"), "LUKASZ");
        assert_eq!(normalize_name("Søren"), "SOREN");
    }

    #[test]
    fn keeps_hyphens_and_apostrophes() {
        assert_eq!(normalize_name("Kennedy-Wall"), "KENNEDY-WALL");
        assert_eq!(normalize_name("o'brien"), "O'BRIEN");
        assert_eq!(normalize_name("O\u{2019}Brien"), "O'BRIEN");
    }

    #[test]
    fn empty_stays_empty() {
        assert_eq!(normalize_name(""), "");
        assert_eq!(normalize_name(" \t\n "), "");
    }

    proptest! {
        #[test]
        fn idempotent(s in "\\PC{0,24}") {
            let once = normalize_name(&s);
            prop_assert_eq!(normalize_name(&once), once);
        }

        #[test]
        fn idempotent_latin(s in "[a-zA-Zàáâãäåçèéêëìíîïñòóôõöùúûüýÿßæøłđ' \\-]{0,24}") {
            let once = normalize_name(&s);
            prop_assert!(once.is_ascii());
            prop_assert_eq!(normalize_name(&once), once);
        }
    }
}
