use lsattn_core::Rng;

const SUBJECTS: &[&str] = &[
    "the cat",
    "a dog",
    "my friend",
    "the old man",
    "she",
    "we",
    "the river",
    "a small bird",
];
const VERBS: &[&str] = &[
    "sees",
    "likes",
    "follows",
    "finds",
    "watches",
    "carries",
    "remembers",
    "paints",
];
const OBJECTS: &[&str] = &[
    "the house",
    "a red ball",
    "the moon",
    "an apple",
    "the garden",
    "a letter",
    "the sea",
    "two stones",
];
const ENDINGS: &[&str] = &[".", " today.", " again.", " at night.", " slowly."];

/// Deterministic English-like text from a tiny template grammar: enough
/// structure to learn at desk scale, with real uncertainty between words.
pub fn synthetic_text(len: usize, seed: u64) -> Vec<u8> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::with_capacity(len + 64);
    while out.len() < len {
        let pick = |rng: &mut Rng, words: &[&str]| words[rng.below(words.len())].to_string();
        let sentence = format!(
            "{} {} {}{} ",
            pick(&mut rng, SUBJECTS),
            pick(&mut rng, VERBS),
            pick(&mut rng, OBJECTS),
            pick(&mut rng, ENDINGS)
        );
        out.extend_from_slice(sentence.as_bytes());
    }
    out.truncate(len);
    out
}
