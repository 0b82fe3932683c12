//! Script normalization and the comma-delimited byte encoding.
//!
//! Raw script bytes are reduced to a canonical alphabet before any model sees
//! them: whitespace other than line feed is dropped, `A-Z` is lowercased and
//! every byte outside US-ASCII becomes `?`. The normalized text is then stored
//! as decimal byte codes separated by commas (`"a"` is stored as `97`).

use std::fmt;
use std::io::{Read, Write};

use thiserror::Error;

/// Byte substituted for anything outside US-ASCII.
pub const REPLACEMENT: u8 = b'?';

/// Default truncation length for LaMP inputs.
pub const LAMP_MAX_LEN: usize = 200;

/// Default truncation length for CPoLS inputs.
pub const CPOLS_MAX_LEN: usize = 1000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NormalizeError {
    #[error("code {code} at position {position} is outside the ASCII range")]
    NonAscii { position: usize, code: u8 },
    #[error("byte {code:#04x} at position {position} cannot appear in normalized text")]
    NotNormalized { position: usize, code: u8 },
    #[error("malformed encoded sequence at byte offset {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for NormalizeError {
    fn from(e: std::io::Error) -> Self {
        NormalizeError::Io(e.to_string())
    }
}

/// Script text as extracted, before normalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawScript {
    pub bytes: Vec<u8>,
    pub source_id: String,
}

impl RawScript {
    pub fn new(source_id: impl Into<String>, bytes: impl Into<Vec<u8>>) -> Self {
        Self {
            bytes: bytes.into(),
            source_id: source_id.into(),
        }
    }
}

/// Text over the normalized alphabet. Only constructed by [`normalize`] or
/// by a checked [`decode`].
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct NormalizedScript(Vec<u8>);

impl NormalizedScript {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }
}

impl fmt::Debug for NormalizedScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "NormalizedScript({:?})",
            String::from_utf8_lossy(&self.0)
        )
    }
}

/// A script as byte codes. `codes` may extend past `valid_length` with
/// padding; positions at or beyond `valid_length` carry no content.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct EncodedSequence {
    pub codes: Vec<u8>,
    pub valid_length: usize,
}

impl EncodedSequence {
    /// A fully valid sequence (no padding).
    pub fn new(codes: Vec<u8>) -> Self {
        let valid_length = codes.len();
        Self {
            codes,
            valid_length,
        }
    }

    /// Panics if `valid_length` exceeds the number of codes.
    pub fn with_valid_length(codes: Vec<u8>, valid_length: usize) -> Self {
        assert!(
            valid_length <= codes.len(),
            "valid_length {valid_length} exceeds {} codes",
            codes.len()
        );
        Self {
            codes,
            valid_length,
        }
    }

    pub fn valid_codes(&self) -> &[u8] {
        &self.codes[..self.valid_length]
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

/// Whitespace dropped by normalization: space, tab, CR, vertical tab, form feed.
fn is_removed_whitespace(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\r' | 0x0B | 0x0C)
}

pub fn normalize(raw: &RawScript) -> NormalizedScript {
    normalize_bytes(&raw.bytes)
}

/// CRLF collapses to LF because every CR is removed.
pub fn normalize_bytes(bytes: &[u8]) -> NormalizedScript {
    let out = bytes
        .iter()
        .filter(|&&b| !is_removed_whitespace(b))
        .map(|&b| {
            if b >= 0x80 {
                REPLACEMENT
            } else {
                b.to_ascii_lowercase()
            }
        })
        .collect();
    NormalizedScript(out)
}

/// Keeps the first `max_len` bytes.
pub fn encode(script: &NormalizedScript, max_len: usize) -> EncodedSequence {
    let n = script.len().min(max_len);
    EncodedSequence::new(script.0[..n].to_vec())
}

pub fn decode(seq: &EncodedSequence) -> Result<NormalizedScript, NormalizeError> {
    let codes = seq.valid_codes();
    for (position, &code) in codes.iter().enumerate() {
        if code > 127 {
            return Err(NormalizeError::NonAscii { position, code });
        }
        if code.is_ascii_uppercase() || is_removed_whitespace(code) {
            return Err(NormalizeError::NotNormalized { position, code });
        }
    }
    Ok(NormalizedScript(codes.to_vec()))
}

/// Text form of the valid codes: `97,98`; empty for an empty sequence.
pub fn format_encoded(seq: &EncodedSequence) -> String {
    let mut s = String::with_capacity(seq.valid_length * 4);
    for (i, code) in seq.valid_codes().iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&code.to_string());
    }
    s
}

pub fn write_encoded<W: Write>(seq: &EncodedSequence, mut sink: W) -> Result<(), NormalizeError> {
    sink.write_all(format_encoded(seq).as_bytes())?;
    Ok(())
}

/// Parses `97,98`. A single trailing line break is tolerated.
pub fn parse_encoded(text: &[u8]) -> Result<EncodedSequence, NormalizeError> {
    let body = text
        .strip_suffix(b"\r\n")
        .or_else(|| text.strip_suffix(b"\n"))
        .unwrap_or(text);
    if body.is_empty() {
        return Ok(EncodedSequence::default());
    }
    let mut codes = Vec::with_capacity(body.len() / 3 + 1);
    let mut offset = 0;
    for token in body.split(|&b| b == b',') {
        if token.is_empty() {
            return Err(NormalizeError::Parse {
                offset,
                reason: "empty field".into(),
            });
        }
        if let Some(pos) = token.iter().position(|b| !b.is_ascii_digit()) {
            return Err(NormalizeError::Parse {
                offset: offset + pos,
                reason: format!("unexpected byte {:#04x}", token[pos]),
            });
        }
        let value = if token.len() > 3 {
            None
        } else {
            token
                .iter()
                .try_fold(0u32, |acc, &d| Some(acc * 10 + u32::from(d - b'0')))
                .filter(|&v| v <= 255)
        };
        match value {
            Some(v) => codes.push(v as u8),
            None => {
                return Err(NormalizeError::Parse {
                    offset,
                    reason: format!("value {} exceeds 255", String::from_utf8_lossy(token)),
                })
            }
        }
        offset += token.len() + 1;
    }
    Ok(EncodedSequence::new(codes))
}

pub fn read_encoded<R: Read>(mut source: R) -> Result<EncodedSequence, NormalizeError> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    parse_encoded(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn norm(s: &[u8]) -> Vec<u8> {
        normalize_bytes(s).into_bytes()
    }

    #[test]
    fn normalize_drops_whitespace_and_lowercases() {
        assert_eq!(norm(b"A b\tC\nD"), b"abc\nd");
        assert_eq!(norm(b"abc"), b"abc");
    }

    #[test]
    fn normalize_replaces_non_ascii() {
        assert_eq!(norm(&[0xC3]), b"?");
        assert_eq!(norm("caf\u{e9}".as_bytes()), b"caf??");
    }

    #[test]
    fn crlf_collapses_and_lone_cr_is_removed() {
        assert_eq!(norm(b"a\r\nb\rc\x0b\x0cd"), b"a\nbcd");
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode(&normalize_bytes(b"a"), 200).codes, vec![97]);
        let empty = encode(&normalize_bytes(b""), 200);
        assert!(empty.codes.is_empty());
        assert_eq!(empty.valid_length, 0);
        let t = encode(&normalize_bytes(b"ab\n"), 2);
        assert_eq!(t.codes, vec![97, 98]);
        assert_eq!(t.valid_length, 2);
    }

    #[test]
    fn decode_examples() {
        assert_eq!(
            decode(&EncodedSequence::new(vec![97, 98]))
                .unwrap()
                .as_bytes(),
            b"ab"
        );
        assert!(decode(&EncodedSequence::default()).unwrap().is_empty());
        assert_eq!(
            decode(&EncodedSequence::new(vec![200])),
            Err(NormalizeError::NonAscii {
                position: 0,
                code: 200
            })
        );
        assert!(matches!(
            decode(&EncodedSequence::new(vec![b'A'])),
            Err(NormalizeError::NotNormalized { .. })
        ));
    }

    #[test]
    fn text_format_examples() {
        assert_eq!(format_encoded(&EncodedSequence::new(vec![97, 98])), "97,98");
        assert_eq!(format_encoded(&EncodedSequence::default()), "");
        assert_eq!(parse_encoded(b"").unwrap(), EncodedSequence::default());
        assert_eq!(parse_encoded(b"97,98\n").unwrap().codes, vec![97, 98]);
    }

    #[test]
    fn malformed_text_is_rejected_with_offset() {
        match parse_encoded(b"97,,98") {
            Err(NormalizeError::Parse { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(
            parse_encoded(b"97,256"),
            Err(NormalizeError::Parse { offset: 3, .. })
        ));
        assert!(matches!(
            parse_encoded(b"97,9x"),
            Err(NormalizeError::Parse { offset: 4, .. })
        ));
        assert!(parse_encoded(b"97,").is_err());
        assert!(parse_encoded(b"1000").is_err());
    }

    #[test]
    fn only_valid_codes_are_written() {
        let seq = EncodedSequence::with_valid_length(vec![97, 0, 0], 1);
        assert_eq!(format_encoded(&seq), "97");
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let once = normalize_bytes(&bytes);
            let twice = normalize_bytes(once.as_bytes());
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn normalized_alphabet_is_closed(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let out = normalize_bytes(&bytes);
            prop_assert!(out.len() <= bytes.len());
            for &b in out.as_bytes() {
                prop_assert!(b < 0x80);
                prop_assert!(!b.is_ascii_uppercase());
                prop_assert!(b == b'\n' || !b.is_ascii_whitespace() && b != 0x0B);
            }
            // decode accepts everything normalize produces
            let seq = encode(&out, out.len());
            prop_assert_eq!(decode(&seq).unwrap(), out);
        }

        #[test]
        fn encoded_text_round_trips(codes in proptest::collection::vec(any::<u8>(), 0..512)) {
            let seq = EncodedSequence::new(codes);
            let mut buf = Vec::new();
            write_encoded(&seq, &mut buf).unwrap();
            prop_assert_eq!(read_encoded(&buf[..]).unwrap(), seq);
        }
    }
}
