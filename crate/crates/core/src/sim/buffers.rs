use crate::model::NodeEmbeddingMatrix;

/// Two node-embedding buffers that alternate input/output roles between
/// layers. Both are split into `banks` banks; bank `b` holds the rows
/// `v` with `v mod banks == b`.
#[derive(Debug, Clone)]
pub struct BankedBufferPair {
    buffers: [NodeEmbeddingMatrix; 2],
    input: usize,
    banks: usize,
}

impl BankedBufferPair {
    pub fn new(initial: NodeEmbeddingMatrix, banks: usize) -> Self {
        assert!(banks >= 1);
        let other = NodeEmbeddingMatrix::zeros(initial.n(), initial.d());
        BankedBufferPair { buffers: [initial, other], input: 0, banks }
    }

    pub fn banks(&self) -> usize {
        self.banks
    }

    pub fn bank_of(&self, v: usize) -> usize {
        v % self.banks
    }

    /// Node indices held by bank `b`, ascending.
    pub fn bank_rows(&self, b: usize) -> impl Iterator<Item = usize> {
        (b..self.buffers[0].n()).step_by(self.banks)
    }

    /// 0 for buffer A, 1 for buffer B.
    pub fn active_input(&self) -> usize {
        self.input
    }

    pub fn input(&self) -> &NodeEmbeddingMatrix {
        &self.buffers[self.input]
    }

    /// Reads row `v` through bank `bank`; a read outside the bank is a
    /// protocol error.
    pub fn read_bank(&self, bank: usize, v: usize) -> &[f32] {
        assert_eq!(self.bank_of(v), bank, "row {v} is not in bank {bank}");
        self.input().row(v)
    }

    /// Input buffer for reading and output buffer for writing.
    pub fn split(&mut self) -> (&NodeEmbeddingMatrix, &mut NodeEmbeddingMatrix) {
        let (a, b) = self.buffers.split_at_mut(1);
        if self.input == 0 {
            (&a[0], &mut b[0])
        } else {
            (&b[0], &mut a[0])
        }
    }

    pub fn swap(&mut self) {
        self.input ^= 1;
    }
}

/// The one copy of the input buffer that feeds the broadcast stream.
#[derive(Debug)]
pub struct IntermediateBuffer {
    rows: NodeEmbeddingMatrix,
}

impl IntermediateBuffer {
    /// Copies `input`, counting the duplication in `duplications`.
    pub fn snapshot(input: &NodeEmbeddingMatrix, duplications: &mut usize) -> Self {
        *duplications += 1;
        IntermediateBuffer { rows: input.clone() }
    }

    pub fn row(&self, v: usize) -> &[f32] {
        self.rows.row(v)
    }

    pub fn len(&self) -> usize {
        self.rows.n()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.n() == 0
    }
}
