use std::collections::HashMap;

use super::DataError;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token/id bijection with reserved padding and unknown entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    class_count: usize,
}

impl Vocabulary {
    pub fn new(class_count: usize) -> Result<Self, DataError> {
        if class_count < 2 {
            return Err(DataError::ClassCount(class_count));
        }
        let mut v = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
            class_count,
        };
        v.insert(PAD_TOKEN);
        v.insert(UNK_TOKEN);
        Ok(v)
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>, class_count: usize) -> Result<Self, DataError> {
        if tokens.first().map(String::as_str) != Some(PAD_TOKEN)
            || tokens.get(1).map(String::as_str) != Some(UNK_TOKEN)
        {
            return Err(DataError::Format(
                "vocabulary must start with <pad>, <unk>".into(),
            ));
        }
        let mut v = Vocabulary::new(class_count)?;
        for t in tokens.into_iter().skip(2) {
            if v.token_to_id.contains_key(&t) {
                return Err(DataError::Format(format!(
                    "duplicate vocabulary token `{t}`"
                )));
            }
            v.insert(&t);
        }
        Ok(v)
    }

    /// Id of `token`, adding it if new.
    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.token_to_id.get(token) {
            return id;
        }
        let id = self.id_to_token.len();
        self.token_to_id.insert(token.to_string(), id);
        self.id_to_token.push(token.to_string());
        id
    }

    /// Id of `token`, or [`UNK_ID`] when absent.
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_and_bijection() {
        let mut v = Vocabulary::new(2).unwrap();
        assert_eq!(v.id(PAD_TOKEN), PAD_ID);
        assert_eq!(v.id(UNK_TOKEN), UNK_ID);
        let beer = v.insert("beer");
        assert_eq!(v.insert("beer"), beer);
        assert_eq!(v.token(beer), Some("beer"));
        assert_eq!(v.id("missing"), UNK_ID);
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t), i);
        }
    }

    #[test]
    fn class_count_at_least_two() {
        assert!(matches!(Vocabulary::new(1), Err(DataError::ClassCount(1))));
    }

    #[test]
    fn from_tokens_round_trip() {
        let mut v = Vocabulary::new(3).unwrap();
        v.insert("a");
        v.insert("b");
        let back = Vocabulary::from_tokens(v.tokens().to_vec(), 3).unwrap();
        assert_eq!(back, v);
        assert!(Vocabulary::from_tokens(vec!["a".into()], 2).is_err());
    }
}
