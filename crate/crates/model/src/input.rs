//! Model inputs and the flattened edit-operation space.
//!
//! The sequence is `src [SEP] <S> mt <T>`. Every row has two operations:
//! column 0 deletes the row's token and column 1 inserts after it, so the
//! flattened index of an operation is `row * 2 + column`. Only rows of the
//! target side are available: deleting a MT token, inserting after `<S>` or
//! after a MT token, and deleting `<T>`, which means STOP.

use apeorder_core::EditAction;

use crate::error::ModelError;
use crate::vocab::Vocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Stop,
    Delete(usize),
    Insert(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelInput {
    pub ids: Vec<usize>,
    pub segments: Vec<usize>,
    /// Row of `<S>`.
    pub start_row: usize,
    pub mt_len: usize,
}

impl ModelInput {
    pub fn new<S: AsRef<str>, T: AsRef<str>>(
        vocab: &Vocab,
        src: &[S],
        mt: &[T],
        max_len: usize,
    ) -> Result<Self, ModelError> {
        let len = src.len() + mt.len() + 3;
        if len > max_len {
            return Err(ModelError::Length { len, max: max_len });
        }
        let mut ids = Vec::with_capacity(len);
        ids.extend(src.iter().map(|t| vocab.id(t.as_ref())));
        ids.push(Vocab::SEP_ID);
        let start_row = ids.len();
        ids.push(Vocab::START_ID);
        ids.extend(mt.iter().map(|t| vocab.id(t.as_ref())));
        ids.push(Vocab::END_ID);
        let segments = (0..len).map(|i| usize::from(i >= start_row)).collect();
        Ok(ModelInput { ids, segments, start_row, mt_len: mt.len() })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn end_row(&self) -> usize {
        self.start_row + self.mt_len + 1
    }

    pub fn num_ops(&self) -> usize {
        2 * self.len()
    }

    pub fn is_available(&self, op: usize) -> bool {
        let (row, col) = (op / 2, op % 2);
        if col == 0 {
            row > self.start_row && row <= self.end_row()
        } else {
            row >= self.start_row && row < self.end_row()
        }
    }

    /// `true` for available operations.
    pub fn mask(&self) -> Vec<bool> {
        (0..self.num_ops()).map(|op| self.is_available(op)).collect()
    }

    pub fn op(&self, op: usize) -> Result<EditOp, ModelError> {
        if op >= self.num_ops() || !self.is_available(op) {
            return Err(ModelError::MaskedOp { op });
        }
        let row = op / 2;
        Ok(match op % 2 {
            0 if row == self.end_row() => EditOp::Stop,
            0 => EditOp::Delete(row - self.start_row - 1),
            _ => EditOp::Insert(row - self.start_row),
        })
    }

    /// Flattened operation of a gold action, if it is available here.
    pub fn op_index(&self, action: &EditAction) -> Result<usize, ModelError> {
        let op = match action {
            EditAction::Stop => self.end_row() * 2,
            EditAction::Delete { pos, .. } => (self.start_row + 1 + pos) * 2,
            EditAction::Insert { pos, .. } => (self.start_row + pos) * 2 + 1,
        };
        let ok = match action {
            EditAction::Delete { pos, .. } => *pos < self.mt_len,
            EditAction::Insert { pos, .. } => *pos <= self.mt_len,
            EditAction::Stop => true,
        };
        if ok && self.is_available(op) {
            Ok(op)
        } else {
            Err(ModelError::MaskedAction { action: action.to_string() })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(src: &str, mt: &str) -> ModelInput {
        let v = Vocab::build(src.split_whitespace().chain(mt.split_whitespace()));
        let s: Vec<&str> = src.split_whitespace().collect();
        let m: Vec<&str> = mt.split_whitespace().collect();
        ModelInput::new(&v, &s, &m, 64).unwrap()
    }

    #[test]
    fn layout_and_mask() {
        let x = input("s1 s2 s3", "a b");
        assert_eq!(x.len(), 8);
        assert_eq!(x.segments, vec![0, 0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(x.start_row, 4);
        assert_eq!(x.mask().iter().filter(|&&m| m).count(), 2 * 2 + 2);
        assert_eq!(x.op(2 * 4 + 1).unwrap(), EditOp::Insert(0));
        assert_eq!(x.op(2 * 5).unwrap(), EditOp::Delete(0));
        assert_eq!(x.op(2 * 6 + 1).unwrap(), EditOp::Insert(2));
        assert_eq!(x.op(2 * 7).unwrap(), EditOp::Stop);
        assert!(x.op(2 * 4).is_err());
        assert!(x.op(2 * 7 + 1).is_err());
        assert!(x.op(2 * 3 + 1).is_err());
    }

    #[test]
    fn gold_ops_round_trip() {
        let x = input("s", "a b c");
        for action in ["I:0:x", "I:3:x", "D:0:a", "D:2:c", "STOP"] {
            let a: EditAction = action.parse().unwrap();
            let op = x.op_index(&a).unwrap();
            let back = match x.op(op).unwrap() {
                EditOp::Stop => EditAction::Stop,
                EditOp::Delete(p) => EditAction::delete(p, a.token().unwrap()),
                EditOp::Insert(p) => EditAction::insert(p, "x"),
            };
            assert_eq!(back, a);
        }
        assert!(x.op_index(&"D:3:x".parse().unwrap()).is_err());
        assert!(x.op_index(&"I:4:x".parse().unwrap()).is_err());
    }

    #[test]
    fn too_long() {
        let v = Vocab::build([]);
        assert!(matches!(ModelInput::new(&v, &["a"; 5], &["b"; 5], 12), Err(ModelError::Length { len: 13, max: 12 })));
    }
}
