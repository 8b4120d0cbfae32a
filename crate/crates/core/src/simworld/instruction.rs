//! Atomic edit operations and their instruction grammar.
//!
//! ```text
//! Add a <desc> [to the scene | <predicate> the <desc>]
//! Remove the <desc> [from the scene]
//! Change the <desc> to <value> <key>                 modify, one attribute
//! Change the <desc> to a <desc'>                     modify if the nouns match
//!                                                    and exactly one attribute
//!                                                    differs, replace otherwise
//! Change the <desc> to be <predicate> the <desc>     modify, relation
//! Change the <desc> to be apart from the <desc>      modify, relation removed
//! Replace the <desc> [<locative>] with [a] <desc'>
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};

use super::grammar::{render_descriptor, tokenize, with_article, Cursor};
use super::scene::Descriptor;
use super::vocab::ConceptKey;
use super::SimError;

/// The relation an added object should have to an existing one. The
/// predicate is stored as written (it may be an inverse phrase).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationSpec {
    pub predicate: String,
    pub anchor: Descriptor,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "change", rename_all = "snake_case")]
pub enum Change {
    Attribute { key: ConceptKey, value: String },
    /// Sets the relation between the target and `anchor`; `None` removes
    /// every relation between the two.
    Position { predicate: Option<String>, anchor: Descriptor },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditKind {
    Add,
    Remove,
    Modify,
    Replace,
}

impl fmt::Display for EditKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EditKind::Add => "add",
            EditKind::Remove => "remove",
            EditKind::Modify => "modify",
            EditKind::Replace => "replace",
        })
    }
}

/// One atomic edit over a scene.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EditOp {
    Add {
        object: Descriptor,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        relation: Option<RelationSpec>,
    },
    Remove {
        target: Descriptor,
    },
    Modify {
        target: Descriptor,
        change: Change,
    },
    /// Swaps noun and attributes of the target, keeping its id and relations.
    Replace {
        target: Descriptor,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        locative: Option<String>,
        replacement: Descriptor,
    },
}

impl EditOp {
    pub fn kind(&self) -> EditKind {
        match self {
            EditOp::Add { .. } => EditKind::Add,
            EditOp::Remove { .. } => EditKind::Remove,
            EditOp::Modify { .. } => EditKind::Modify,
            EditOp::Replace { .. } => EditKind::Replace,
        }
    }

    /// Canonical instruction text; [`parse_edit_instruction`] maps it back to
    /// an equal op.
    pub fn render(&self) -> String {
        let the = |d: &Descriptor| format!("the {}", render_descriptor(d, false));
        match self {
            EditOp::Add { object, relation: None } => format!("Add {} to the scene", with_article(object)),
            EditOp::Add {
                object,
                relation: Some(rel),
            } => format!("Add {} {} {}", with_article(object), rel.predicate, the(&rel.anchor)),
            EditOp::Remove { target } => format!("Remove {}", the(target)),
            EditOp::Modify {
                target,
                change: Change::Attribute { key, value },
            } => {
                if target.attributes.contains_key(key) {
                    let mut next = target.clone();
                    next.attributes.insert(*key, value.clone());
                    format!("Change {} to {}", the(target), with_article(&next))
                } else {
                    format!("Change {} to {value} {key}", the(target))
                }
            }
            EditOp::Modify {
                target,
                change: Change::Position { predicate, anchor },
            } => match predicate {
                Some(p) => format!("Change {} to be {p} {}", the(target), the(anchor)),
                None => format!("Change {} to be apart from {}", the(target), the(anchor)),
            },
            EditOp::Replace {
                target,
                locative,
                replacement,
            } => match locative {
                Some(loc) => format!("Replace {} {loc} with {}", the(target), with_article(replacement)),
                None => format!("Replace {} with {}", the(target), with_article(replacement)),
            },
        }
    }
}

impl fmt::Display for EditOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Parses one instruction. Anything outside the four templates is
/// [`SimError::InstructionUnparseable`].
pub fn parse_edit_instruction(text: &str) -> Result<EditOp, SimError> {
    let toks = tokenize(text);
    let mut c = Cursor::new(&toks, text);
    let unparseable = |why: String| SimError::InstructionUnparseable {
        instruction: text.to_owned(),
        reason: why,
    };
    let result = (|| -> Result<EditOp, SimError> {
        let op = match c.next() {
            Some("add") => {
                if !(c.eat("a") || c.eat("an")) {
                    return Err(c.error("expected `a` or `an`".into()));
                }
                let object = c.descriptor(false)?;
                let relation = if c.eat_seq(&["to", "the", "scene"]) || c.at_end() {
                    None
                } else if let Some((phrase, len)) = c.peek_predicate() {
                    c.pos += len;
                    c.expect("the")?;
                    Some(RelationSpec {
                        predicate: phrase,
                        anchor: c.descriptor(false)?,
                    })
                } else {
                    return Err(c.error("expected `to the scene` or a relation".into()));
                };
                EditOp::Add { object, relation }
            }
            Some("remove") => {
                c.expect("the")?;
                let target = c.descriptor(false)?;
                c.eat_seq(&["from", "the", "scene"]);
                EditOp::Remove { target }
            }
            Some("change") => {
                c.expect("the")?;
                let target = c.descriptor(false)?;
                c.expect("to")?;
                parse_change(&mut c, target)?
            }
            Some("replace") => {
                c.expect("the")?;
                let target = c.descriptor(false)?;
                // The locative runs up to the first `with` after which the rest
                // of the sentence is a single description.
                let loc_start = c.pos;
                let mut found = None;
                for at in loc_start..toks.len() {
                    if toks[at].text != "with" {
                        continue;
                    }
                    let mut probe = Cursor::new(&toks, text);
                    probe.pos = at + 1;
                    let _ = probe.eat("a") || probe.eat("an");
                    if let Ok(d) = probe.descriptor(false) {
                        if probe.at_end() {
                            found = Some((at, d));
                            break;
                        }
                    }
                }
                let Some((with_at, replacement)) = found else {
                    return Err(c.error("expected `with <description>`".into()));
                };
                let locative = (with_at > loc_start).then(|| {
                    toks[loc_start..with_at]
                        .iter()
                        .map(|t| t.text.as_str())
                        .collect::<Vec<_>>()
                        .join(" ")
                });
                c.pos = toks.len();
                EditOp::Replace {
                    target,
                    locative,
                    replacement,
                }
            }
            _ => {
                c.pos = 0;
                return Err(c.error("instruction must start with Add, Remove, Change or Replace".into()));
            }
        };
        if !c.at_end() {
            return Err(c.error("unexpected trailing words".into()));
        }
        Ok(op)
    })();
    result.map_err(|e| match e {
        SimError::Grammar { message, token, .. } => unparseable(if token.is_empty() {
            message
        } else {
            format!("{message} at {token:?}")
        }),
        other => other,
    })
}

fn parse_change(c: &mut Cursor, target: Descriptor) -> Result<EditOp, SimError> {
    if c.eat("be") {
        let predicate = if c.eat_seq(&["apart", "from"]) {
            None
        } else if let Some((phrase, len)) = c.peek_predicate() {
            c.pos += len;
            Some(phrase)
        } else {
            return Err(c.error("expected a relation after `to be`".into()));
        };
        c.expect("the")?;
        let anchor = c.descriptor(false)?;
        return Ok(EditOp::Modify {
            target,
            change: Change::Position { predicate, anchor },
        });
    }
    if c.eat("a") || c.eat("an") {
        let next = c.descriptor(false)?;
        if next.noun == target.noun {
            let dropped = target.attributes.keys().any(|k| !next.attributes.contains_key(k));
            let changed: Vec<_> = next
                .attributes
                .iter()
                .filter(|(k, v)| target.attributes.get(k) != Some(v))
                .collect();
            if !dropped && changed.len() == 1 {
                let (key, value) = changed[0];
                return Ok(EditOp::Modify {
                    target,
                    change: Change::Attribute {
                        key: *key,
                        value: value.clone(),
                    },
                });
            }
        }
        return Ok(EditOp::Replace {
            target,
            locative: None,
            replacement: next,
        });
    }
    // "<value> <key>"
    let (Some(value), Some(key)) = (c.peek(), c.peek_at(1)) else {
        return Err(c.error("expected `a <description>`, `be ...` or `<value> <key>`".into()));
    };
    match key.parse::<ConceptKey>() {
        Ok(key) if key.is_attribute() => {
            c.pos += 2;
            Ok(EditOp::Modify {
                target,
                change: Change::Attribute {
                    key,
                    value: value.to_owned(),
                },
            })
        }
        _ => Err(c.error("expected `a <description>`, `be ...` or `<value> <key>`".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ConceptKey::*;

    #[test]
    fn table_phrasings() {
        assert_eq!(
            parse_edit_instruction("Change the pants to khaki color").unwrap(),
            EditOp::Modify {
                target: Descriptor::new("pants"),
                change: Change::Attribute {
                    key: Color,
                    value: "khaki".into()
                }
            }
        );
        assert_eq!(
            parse_edit_instruction("Replace the cactus on the corgi's head with a tiny apple").unwrap(),
            EditOp::Replace {
                target: Descriptor::new("cactus"),
                locative: Some("on the corgi's head".into()),
                replacement: Descriptor::new("apple").with(Size, "tiny"),
            }
        );
        assert_eq!(
            parse_edit_instruction("Add a duck with metallic texture to the scene").unwrap(),
            EditOp::Add {
                object: Descriptor::new("duck").with(Texture, "metallic"),
                relation: None
            }
        );
        assert_eq!(
            parse_edit_instruction("Change the red apple to a pink apple").unwrap(),
            EditOp::Modify {
                target: Descriptor::new("apple").with(Color, "red"),
                change: Change::Attribute {
                    key: Color,
                    value: "pink".into()
                }
            }
        );
        assert_eq!(
            parse_edit_instruction("Change the blue apple to a blue bowl").unwrap().kind(),
            EditKind::Replace
        );
        assert_eq!(
            parse_edit_instruction("Replace the orange slices on the plate with sushi").unwrap(),
            EditOp::Replace {
                target: Descriptor::new("orange"),
                locative: Some("slices on the plate".into()),
                replacement: Descriptor::new("sushi"),
            }
        );
    }

    #[test]
    fn renders_table_phrasings_verbatim() {
        for text in [
            "Add a duck with metallic texture to the scene",
            "Change the pants to khaki color",
            "Replace the cactus on the corgi's head with a tiny apple",
            "Change the red apple to a pink apple",
            "Remove the fork",
        ] {
            assert_eq!(parse_edit_instruction(text).unwrap().render(), text);
        }
    }

    #[test]
    fn relations() {
        let op = parse_edit_instruction("Add a white car next to the tiny dog").unwrap();
        assert_eq!(
            op,
            EditOp::Add {
                object: Descriptor::new("car").with(Color, "white"),
                relation: Some(RelationSpec {
                    predicate: "next to".into(),
                    anchor: Descriptor::new("dog").with(Size, "tiny"),
                })
            }
        );
        let op = parse_edit_instruction("Change the cup to be to the left of the table").unwrap();
        assert!(matches!(op, EditOp::Modify { change: Change::Position { predicate: Some(ref p), .. }, .. } if p == "to the left of"));
        let op = parse_edit_instruction("Change the cup to be apart from the table").unwrap();
        assert!(matches!(op, EditOp::Modify { change: Change::Position { predicate: None, .. }, .. }));
    }

    #[test]
    fn rejects_out_of_grammar() {
        for bad in ["frobnicate the dog", "do something nice", "", "Remove the", "Add a dog please", "Change the dog to"] {
            assert!(
                matches!(parse_edit_instruction(bad), Err(SimError::InstructionUnparseable { .. })),
                "{bad}"
            );
        }
    }
}
