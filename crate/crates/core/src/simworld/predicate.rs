use super::scene::{Scene, SceneObject};
use super::vocab::{canonical_predicate, singularize};
use super::SimError;
use crate::eval::{Answer, Predicate, Question};

fn noun_matches(object: &SceneObject, noun: &str) -> bool {
    object.noun == noun || object.noun == singularize(noun)
}

/// Answers a question by syntactic matching over the scene. Nouns in
/// questions may be plural.
///
/// ```
/// use grape::eval::{Answer, Predicate, Question};
/// use grape::simworld::{evaluate_predicate, parse_target_scene};
///
/// let scene = parse_target_scene("a duck with metallic texture").unwrap();
/// let q = Question::new("q", "Is the duck wooden?").with_predicate(Predicate::HasAttribute {
///     noun: "duck".into(),
///     key: "texture".into(),
///     value: "wooden".into(),
/// });
/// assert_eq!(evaluate_predicate(&scene, &q).unwrap(), Answer::No);
/// ```
pub fn evaluate_predicate(scene: &Scene, question: &Question) -> Result<Answer, SimError> {
    let predicate = question
        .predicate
        .as_ref()
        .ok_or_else(|| SimError::Unanswerable(question.text.clone()))?;
    let yes = match predicate {
        Predicate::Exists { noun, count } => {
            let n = scene.objects().iter().filter(|o| noun_matches(o, noun)).count();
            match count {
                None => n > 0,
                Some(c) => n == *c as usize,
            }
        }
        Predicate::HasAttribute { noun, key, value } => match key.parse() {
            Ok(key) => scene
                .objects()
                .iter()
                .any(|o| noun_matches(o, noun) && o.attributes.get(&key) == Some(value)),
            Err(_) => false,
        },
        Predicate::Related {
            subject,
            predicate,
            object,
        } => match canonical_predicate(predicate) {
            None => false,
            Some((canonical, swapped)) => {
                let (s, o) = if swapped { (object, subject) } else { (subject, object) };
                let symmetric = super::vocab::is_symmetric(canonical);
                let noun_of = |id: &str| scene.object(id).expect("valid scene");
                scene.relations().iter().any(|r| {
                    let (rs, ro) = (noun_of(&r.subject), noun_of(&r.object));
                    r.predicate == canonical
                        && ((noun_matches(rs, s) && noun_matches(ro, o))
                            || (symmetric && noun_matches(rs, o) && noun_matches(ro, s)))
                })
            }
        },
    };
    Ok(Answer::from_bool(yes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::parse_target_scene;

    fn ask(scene: &str, p: Predicate) -> Answer {
        let s = parse_target_scene(scene).unwrap();
        evaluate_predicate(&s, &Question::new("q", "?").with_predicate(p)).unwrap()
    }

    #[test]
    fn exists_and_counts() {
        let p = |noun: &str, count| Predicate::Exists {
            noun: noun.into(),
            count,
        };
        assert_eq!(ask("a green bench", p("bench", None)), Answer::Yes);
        assert_eq!(ask("a green bench", p("car", None)), Answer::No);
        assert_eq!(ask("three apples", p("apples", Some(3))), Answer::Yes);
        assert_eq!(ask("three apples", p("apple", Some(2))), Answer::No);
    }

    #[test]
    fn attributes() {
        let p = |v: &str| Predicate::HasAttribute {
            noun: "apple".into(),
            key: "color".into(),
            value: v.into(),
        };
        assert_eq!(ask("a red apple", p("pink")), Answer::No);
        assert_eq!(ask("a red apple", p("red")), Answer::Yes);
    }

    #[test]
    fn relations_any_phrasing() {
        let rel = |s: &str, pr: &str, o: &str| Predicate::Related {
            subject: s.into(),
            predicate: pr.into(),
            object: o.into(),
        };
        let scene = "a dog surrounded by an orange";
        assert_eq!(ask(scene, rel("dog", "surrounded by", "oranges")), Answer::Yes);
        assert_eq!(ask(scene, rel("orange", "surrounding", "dog")), Answer::Yes);
        assert_eq!(ask(scene, rel("orange", "surrounded by", "dog")), Answer::No);
        assert_eq!(ask("a cup next to a plate", rel("plate", "next to", "cup")), Answer::Yes);
    }

    #[test]
    fn needs_predicate() {
        let s = parse_target_scene("a dog").unwrap();
        assert!(matches!(
            evaluate_predicate(&s, &Question::new("q", "Is it nice?")),
            Err(SimError::Unanswerable(_))
        ));
    }
}
