use std::collections::HashMap;

use discedge_core::tokenizer::{decode_tokens, encode_tokens, encoded_len, Vocab};
use proptest::prelude::*;

const MESSAGES: [&str; 9] = [
    "What are the fundamental components of an autonomous mobile robot?",
    "You mentioned sensors. What are the most common types for obstacle avoidance?",
    "Can you explain the concept of a PID controller in the context of motor control?",
    "Write a simple Python function for a proportional (P) controller.",
    "In your previous code, what do the `kp` and `error` variables represent?",
    "How would you modify that function to include the integral (I) component?",
    "Now, let's talk about localization. What is SLAM?",
    "What are some of the main challenges when implementing that on a small, low-power robot?",
    "Can you compare the EKF SLAM and Particle Filter SLAM approaches?",
];

// (utf8 bytes, encoded bytes, token count) computed by a separate Python
// implementation of greedy longest match over the shipped vocabulary.
const ORACLE: [(usize, usize, usize); 9] = [
    (66, 21, 11),
    (77, 27, 14),
    (80, 31, 16),
    (65, 22, 12),
    (72, 31, 17),
    (73, 31, 18),
    (49, 23, 12),
    (88, 33, 17),
    (65, 23, 12),
];

/// Scans every candidate length at every position. Quadratic but obviously
/// greedy.
fn brute_force(entries: &[String], text: &str) -> Vec<u32> {
    let ids: HashMap<&[u8], u32> = entries.iter().enumerate().map(|(i, e)| (e.as_bytes(), 256 + i as u32)).collect();
    let bytes = text.as_bytes();
    let mut out = vec![];
    let mut i = 0;
    while i < bytes.len() {
        let hit = (1..=bytes.len() - i).rev().find_map(|len| ids.get(&bytes[i..i + len]).map(|&id| (id, len)));
        match hit {
            Some((id, len)) => {
                out.push(id);
                i += len;
            }
            None => {
                out.push(bytes[i] as u32);
                i += 1;
            }
        }
    }
    out
}

#[test]
fn default_vocab_matches_oracle() {
    let vocab = Vocab::default_for("qwen");
    let (mut utf8, mut encoded) = (0, 0);
    for (msg, &(u, e, n)) in MESSAGES.iter().zip(ORACLE.iter()) {
        let t = vocab.tokenize(msg);
        assert_eq!((msg.len(), encoded_len(&t), t.len()), (u, e, n), "{msg}");
        utf8 += msg.len();
        encoded += encoded_len(&t);
    }
    assert_eq!((utf8, encoded), (635, 242));
    assert_eq!(&*vocab.tokenize("<|user|>\n"), &[257, 10]);
}

#[test]
fn english_prompts_compress() {
    let vocab = Vocab::default_for("qwen");
    for msg in MESSAGES.iter().filter(|m| m.chars().count() >= 20) {
        assert!(encoded_len(&vocab.tokenize(msg)) < msg.len(), "{msg}");
    }
}

fn small_vocab() -> impl Strategy<Value = Vec<String>> {
    prop::collection::btree_set("[ab\u{e9} ]{2,4}", 0..12).prop_map(|s| s.into_iter().collect())
}

proptest! {
    #[test]
    fn round_trip(text in "\\PC{0,200}") {
        let vocab = Vocab::default_for("qwen");
        let t = vocab.tokenize(&text);
        prop_assert_eq!(vocab.detokenize(&t).unwrap(), text);
        let bytes = encode_tokens(&t);
        prop_assert_eq!(bytes.len(), encoded_len(&t));
        prop_assert_eq!(decode_tokens(&bytes).unwrap(), t);
    }

    #[test]
    fn greedy_matches_brute_force(entries in small_vocab(), text in "[ab\u{e9} \n]{0,40}") {
        let vocab = Vocab::from_entries("m", entries.clone()).unwrap();
        prop_assert_eq!(vocab.tokenize(&text).into_inner(), brute_force(&entries, &text));
    }

    #[test]
    fn newline_is_a_hard_boundary(a in "\\PC{0,60}", b in "\\PC{0,60}") {
        let vocab = Vocab::default_for("qwen");
        let mut expected = vocab.tokenize(&a).into_inner();
        expected.push(10);
        expected.extend(vocab.tokenize(&b).iter());
        prop_assert_eq!(vocab.tokenize(&format!("{a}\n{b}")).into_inner(), expected);
    }
}
