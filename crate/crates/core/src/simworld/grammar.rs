//! Tokenizer and the constrained prompt grammar.
//!
//! ```text
//! prompt    := clause ((',' | 'and' | ', and') clause)* ['.']
//! clause    := object | relation
//! object    := ('a' | 'an' | 'one' | COUNT) desc [PREDICATE ('the' | 'a' | 'an') desc]
//! relation  := 'the' desc PREDICATE 'the' desc
//! desc      := VALUE* NOUN ['with' VALUE KEY ('and' VALUE KEY)*]
//! ```
//!
//! `VALUE` is a word from one of the attribute vocabularies, `KEY` is one of
//! `color`, `texture`, `shape`, `size`, `style`, and `COUNT` is `two` to
//! `ten` (the noun is then plural). Relation clauses and `the` references
//! resolve to the first earlier-or-later object matching the descriptor.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::scene::{Attributes, Descriptor, Relation, Scene, SceneObject};
use super::vocab::{
    article_for, count_word, inverse_predicate, key_of_value, parse_count_word, pluralize, predicate_phrases,
    singularize, ConceptKey,
};
use super::SimError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Lowercases and splits on whitespace; commas become their own tokens and a
/// trailing period is dropped.
pub(crate) fn tokenize(input: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut start = None;
    let push = |out: &mut Vec<Token>, s: usize, e: usize| {
        let text = input[s..e].to_lowercase();
        if !text.is_empty() {
            out.push(Token { text, start: s, end: e });
        }
    };
    for (i, c) in input.char_indices() {
        if c.is_whitespace() || c == ',' {
            if let Some(s) = start.take() {
                push(&mut out, s, i);
            }
            if c == ',' {
                out.push(Token {
                    text: ",".into(),
                    start: i,
                    end: i + 1,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        push(&mut out, s, input.len());
    }
    // Sentence-final punctuation.
    if let Some(last) = out.last_mut() {
        while last.text.ends_with(['.', '!']) {
            last.text.pop();
            last.end -= 1;
        }
        if last.text.is_empty() {
            out.pop();
        }
    }
    out
}

pub(crate) struct Cursor<'a> {
    pub toks: &'a [Token],
    pub pos: usize,
    pub source: &'a str,
}

impl<'a> Cursor<'a> {
    pub fn new(toks: &'a [Token], source: &'a str) -> Self {
        Cursor { toks, pos: 0, source }
    }

    pub fn peek(&self) -> Option<&'a str> {
        self.peek_at(0)
    }

    pub fn peek_at(&self, offset: usize) -> Option<&'a str> {
        self.toks.get(self.pos + offset).map(|t| t.text.as_str())
    }

    pub fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    pub fn next(&mut self) -> Option<&'a str> {
        let t = self.peek();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    pub fn eat(&mut self, word: &str) -> bool {
        if self.peek() == Some(word) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    pub fn eat_seq(&mut self, words: &[&str]) -> bool {
        if words.iter().enumerate().all(|(i, w)| self.peek_at(i) == Some(*w)) {
            self.pos += words.len();
            true
        } else {
            false
        }
    }

    pub fn expect(&mut self, word: &str) -> Result<(), SimError> {
        if self.eat(word) {
            Ok(())
        } else {
            Err(self.error(format!("expected {word:?}")))
        }
    }

    /// Predicate phrase starting at the cursor, longest match first.
    pub fn peek_predicate(&self) -> Option<(String, usize)> {
        predicate_phrases().into_iter().find_map(|words| {
            let hit = words.iter().enumerate().all(|(i, w)| self.peek_at(i) == Some(*w));
            hit.then(|| (words.join(" "), words.len()))
        })
    }

    pub fn error(&self, message: String) -> SimError {
        let (start, end, token) = match self.toks.get(self.pos) {
            Some(t) => (t.start, t.end, t.text.clone()),
            None => (self.source.len(), self.source.len(), String::new()),
        };
        SimError::Grammar {
            message,
            start,
            end,
            token,
        }
    }
}

fn is_article(w: &str) -> bool {
    matches!(w, "a" | "an" | "the" | "one") || parse_count_word(w).is_some()
}

fn is_keyword(w: &str) -> bool {
    w.parse::<ConceptKey>().is_ok_and(ConceptKey::is_attribute)
}

impl Cursor<'_> {
    /// True when the token at `offset` ends a descriptor's word run.
    fn is_stop(&self, offset: usize) -> bool {
        match self.peek_at(offset) {
            None => true,
            Some(w) => {
                matches!(w, "," | "and" | "with" | "to" | "from") || {
                    let probe = Cursor {
                        toks: self.toks,
                        pos: self.pos + offset,
                        source: self.source,
                    };
                    probe.peek_predicate().is_some()
                }
            }
        }
    }

    /// `VALUE* NOUN ['with' VALUE KEY ('and' VALUE KEY)*]`. With `plural`,
    /// the noun is singularized.
    pub fn descriptor(&mut self, plural: bool) -> Result<Descriptor, SimError> {
        let mut attrs = Attributes::new();
        let noun = loop {
            let Some(word) = self.peek() else {
                return Err(self.error("expected a noun".into()));
            };
            if self.is_stop(0) {
                return Err(self.error("expected a noun".into()));
            }
            match key_of_value(word) {
                // A value word followed by another word is an attribute;
                // otherwise it is the noun.
                Some(key) if !self.is_stop(1) => {
                    if attrs.insert(key, word.to_owned()).is_some() {
                        return Err(self.error(format!("{key} given twice")));
                    }
                    self.pos += 1;
                }
                _ => {
                    if !word.chars().all(|c| c.is_alphanumeric() || c == '-' || c == '\'') {
                        return Err(self.error(format!("unexpected token {word:?}")));
                    }
                    self.pos += 1;
                    break if plural { singularize(word) } else { word.to_owned() };
                }
            }
        };
        self.with_phrases(&mut attrs)?;
        Ok(Descriptor { noun, attributes: attrs })
    }

    fn with_phrases(&mut self, attrs: &mut Attributes) -> Result<(), SimError> {
        let starts_phrase = |c: &Cursor, off: usize| {
            c.peek_at(off).is_some_and(|v| !is_article(v) && !is_keyword(v))
                && c.peek_at(off + 1).is_some_and(is_keyword)
        };
        if !(self.peek() == Some("with") && starts_phrase(self, 1)) {
            return Ok(());
        }
        self.pos += 1;
        loop {
            let value = self.next().expect("checked").to_owned();
            let key: ConceptKey = self.next().expect("checked").parse().expect("checked");
            if attrs.insert(key, value).is_some() {
                self.pos -= 1;
                return Err(self.error(format!("{key} given twice")));
            }
            if self.peek() == Some("and") && starts_phrase(self, 1) {
                self.pos += 1;
            } else {
                return Ok(());
            }
        }
    }
}

/// Renders `desc` without an article: inline size, shape and color words,
/// then `with <value> <key>` phrases for everything else.
pub(crate) fn render_descriptor(desc: &Descriptor, plural: bool) -> String {
    let mut out = String::new();
    let mut tail = Vec::new();
    for (key, value) in &desc.attributes {
        if key.renders_inline() && key_of_value(value) == Some(*key) {
            write!(out, "{value} ").unwrap();
        } else {
            tail.push(format!("{value} {key}"));
        }
    }
    if plural {
        out.push_str(&pluralize(&desc.noun));
    } else {
        out.push_str(&desc.noun);
    }
    if !tail.is_empty() {
        write!(out, " with {}", tail.join(" and ")).unwrap();
    }
    out
}

/// `a red apple`, `an oval plate`.
pub(crate) fn with_article(desc: &Descriptor) -> String {
    let body = render_descriptor(desc, false);
    format!("{} {body}", article_for(&body))
}

enum Reference {
    /// Index into the object list.
    New(usize),
    /// Resolve by descriptor once every object is known.
    Existing(Descriptor, usize),
}

/// Parses a prompt in the constrained grammar into a scene. Object ids are
/// `o1, o2, ...` in clause order.
pub fn parse_target_scene(prompt: &str) -> Result<Scene, SimError> {
    let toks = tokenize(prompt);
    let mut c = Cursor::new(&toks, prompt);
    if c.at_end() {
        return Err(c.error("empty prompt".into()));
    }
    let mut objects: Vec<SceneObject> = Vec::new();
    let mut pending: Vec<(Reference, String, Reference)> = Vec::new();
    let new_object = |objects: &mut Vec<SceneObject>, d: Descriptor| {
        let id = format!("o{}", objects.len() + 1);
        objects.push(SceneObject {
            id,
            noun: d.noun,
            attributes: d.attributes,
        });
        objects.len() - 1
    };
    loop {
        let first = c.peek().expect("not at end");
        let subject = if first == "the" {
            c.pos += 1;
            let at = c.pos;
            Reference::Existing(c.descriptor(false)?, at)
        } else if matches!(first, "a" | "an" | "one") {
            c.pos += 1;
            Reference::New(new_object(&mut objects, c.descriptor(false)?))
        } else if let Some(n) = parse_count_word(first) {
            c.pos += 1;
            let d = c.descriptor(true)?;
            let idx = new_object(&mut objects, d.clone());
            for _ in 1..n {
                new_object(&mut objects, d.clone());
            }
            Reference::New(idx)
        } else {
            return Err(c.error("expected `a`, `an`, `the` or a count word".into()));
        };
        if let Some((phrase, len)) = c.peek_predicate() {
            c.pos += len;
            let object = match c.next() {
                Some("the") => {
                    let at = c.pos;
                    Reference::Existing(c.descriptor(false)?, at)
                }
                Some("a" | "an") => Reference::New(new_object(&mut objects, c.descriptor(false)?)),
                _ => {
                    c.pos -= 1;
                    return Err(c.error("expected `the`, `a` or `an` after the relation".into()));
                }
            };
            pending.push((subject, phrase, object));
        } else if matches!(subject, Reference::Existing(..)) {
            return Err(c.error("a `the` clause must state a relation".into()));
        }
        if c.at_end() {
            break;
        }
        let sep = c.pos;
        let comma = c.eat(",");
        let and = c.eat("and");
        if !(comma || and) {
            c.pos = sep;
            return Err(c.error("expected `and` or `,` between clauses".into()));
        }
        if c.at_end() {
            return Err(c.error("expected another clause after the separator".into()));
        }
    }
    let mut relations = Vec::new();
    for (s, phrase, o) in pending {
        let resolve = |r: &Reference| -> Result<String, SimError> {
            match r {
                Reference::New(i) => Ok(objects[*i].id.clone()),
                Reference::Existing(d, at) => objects.iter().find(|o| d.matches(o)).map(|o| o.id.clone()).ok_or_else(|| {
                    let t = &toks[*at];
                    SimError::Grammar {
                        message: format!("no object matches \"{}\"", render_descriptor(d, false)),
                        start: t.start,
                        end: t.end,
                        token: t.text.clone(),
                    }
                }),
            }
        };
        let (sid, oid) = (resolve(&s)?, resolve(&o)?);
        if sid == oid {
            return Err(SimError::InvalidScene("relation from an object to itself".into()));
        }
        let rel = Relation::new(&sid, &phrase, &oid)?;
        if !relations.contains(&rel) {
            relations.push(rel);
        }
    }
    Scene::new(objects, relations)
}

/// Renders a scene as a prompt in the same grammar. Identical relation-free
/// objects collapse into a counted clause; relations follow as `the ... the`
/// clauses. Parsing the result yields an equivalent scene whenever every
/// related object is uniquely identified by its descriptor.
pub fn render_prompt(scene: &Scene) -> String {
    let related: std::collections::HashSet<&str> = scene
        .relations()
        .iter()
        .flat_map(|r| [r.subject.as_str(), r.object.as_str()])
        .collect();
    let mut groups: BTreeMap<usize, (Descriptor, u32)> = BTreeMap::new();
    let mut first_of: Vec<(Descriptor, usize)> = Vec::new();
    for (i, o) in scene.objects().iter().enumerate() {
        let d = o.descriptor();
        if !related.contains(o.id.as_str()) {
            if let Some((_, at)) = first_of.iter().find(|(fd, _)| *fd == d) {
                groups.get_mut(at).expect("group exists").1 += 1;
                continue;
            }
            first_of.push((d.clone(), i));
        }
        groups.insert(i, (d, 1));
    }
    let mut clauses: Vec<String> = groups
        .into_values()
        .map(|(d, n)| match count_word(n) {
            Some(word) if n > 1 => format!("{word} {}", render_descriptor(&d, true)),
            _ => with_article(&d),
        })
        .collect();
    let mut rels = scene.relations().to_vec();
    rels.sort();
    for r in rels {
        let s = scene.object(&r.subject).expect("valid scene").descriptor();
        let o = scene.object(&r.object).expect("valid scene").descriptor();
        clauses.push(format!(
            "the {} {} the {}",
            render_descriptor(&s, false),
            r.predicate,
            render_descriptor(&o, false)
        ));
    }
    clauses.join(" and ")
}

/// Phrase describing `id`'s relation to `other` from `id`'s side, e.g.
/// `under` when the stored relation is `other on top of id`.
pub(crate) fn predicate_from(rel: &Relation, id: &str) -> String {
    if rel.subject == id {
        rel.predicate.clone()
    } else {
        inverse_predicate(&rel.predicate).unwrap_or(&rel.predicate).to_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_prompt() {
        let s = parse_target_scene("A green bench, a red car, a blue bowl, and a pink apple.").unwrap();
        let got: Vec<(&str, &str)> = s
            .objects()
            .iter()
            .map(|o| (o.noun.as_str(), o.attributes[&ConceptKey::Color].as_str()))
            .collect();
        assert_eq!(got, [("bench", "green"), ("car", "red"), ("bowl", "blue"), ("apple", "pink")]);
        let and = parse_target_scene("a green bench and a red car and a blue bowl and a pink apple").unwrap();
        assert!(s.equivalent(&and));
    }

    #[test]
    fn with_phrase() {
        let s = parse_target_scene("a duck with metallic texture").unwrap();
        assert_eq!(s.objects().len(), 1);
        assert_eq!(s.objects()[0].noun, "duck");
        assert_eq!(s.objects()[0].attributes[&ConceptKey::Texture], "metallic");
        let s = parse_target_scene("a duck with metallic texture and cartoon style and a red car").unwrap();
        assert_eq!(s.objects().len(), 2);
        assert_eq!(s.objects()[0].attributes.len(), 2);
    }

    #[test]
    fn relations_and_counts() {
        // Only a single new object may follow a predicate.
        assert!(parse_target_scene("a tiny dog surrounded by three oranges").is_err());
        let s = parse_target_scene("a tiny dog surrounded by an orange and a white car next to the tiny dog").unwrap();
        assert_eq!(s.objects().len(), 3);
        assert_eq!(s.relations().len(), 2);
        let s = parse_target_scene("a tiny dog and three apples and a white car and the car next to the dog").unwrap();
        assert_eq!(s.objects().iter().filter(|o| o.noun == "apple").count(), 3);
        assert_eq!(s.relations().len(), 1);
        let s = parse_target_scene("a cup under a table").unwrap();
        assert_eq!(s.relations()[0].predicate, "on top of");
        assert_eq!(s.object(&s.relations()[0].subject).unwrap().noun, "table");
    }

    #[test]
    fn errors_carry_spans() {
        match parse_target_scene("") {
            Err(SimError::Grammar { .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_target_scene("a red car or a dog") {
            Err(SimError::Grammar { token, start, .. }) => {
                assert_eq!(token, "or");
                assert_eq!(start, 10);
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_target_scene("the car next to the dog").is_err());
        assert!(parse_target_scene("a red").is_ok()); // a lone value word is a noun
        assert!(parse_target_scene("a red car and").is_err());
    }

    #[test]
    fn render_roundtrip() {
        for p in [
            "a green bench and a red car and a blue bowl and a pink apple",
            "a duck with metallic texture and three red apples",
            "a tiny dog and a white car and the white car next to the tiny dog",
            "a large round cup with wooden texture and a table and the cup on top of the table",
        ] {
            let s = parse_target_scene(p).unwrap();
            let r = render_prompt(&s);
            let back = parse_target_scene(&r).unwrap();
            assert!(s.equivalent(&back), "{p} -> {r}");
        }
    }
}
