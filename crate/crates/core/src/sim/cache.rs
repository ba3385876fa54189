//! Set-associative LRU cache model used by the teacher simulator.

/// One cache level. 64-byte lines, LRU replacement, write-allocate.
#[derive(Debug, Clone)]
pub struct Cache {
    sets: Vec<Vec<Line>>,
    num_sets: u64,
    tick: u64,
    pub hits: u64,
    pub misses: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Line {
    tag: u64,
    valid: bool,
    last_used: u64,
}

pub const LINE_BYTES: u64 = 64;

impl Cache {
    /// `size_bytes` must be a multiple of `ways * 64`.
    pub fn new(size_bytes: u64, ways: usize) -> Self {
        let num_lines = size_bytes / LINE_BYTES;
        let num_sets = (num_lines / ways as u64).max(1);
        Cache {
            sets: vec![vec![Line::default(); ways]; num_sets as usize],
            num_sets,
            tick: 0,
            hits: 0,
            misses: 0,
        }
    }

    /// Accesses the line containing `addr`, allocating it on a miss.
    /// Returns true on hit.
    pub fn access(&mut self, addr: u64) -> bool {
        self.tick += 1;
        let line_addr = addr / LINE_BYTES;
        let set = (line_addr % self.num_sets) as usize;
        let tag = line_addr / self.num_sets;

        let ways = &mut self.sets[set];
        if let Some(line) = ways.iter_mut().find(|l| l.valid && l.tag == tag) {
            line.last_used = self.tick;
            self.hits += 1;
            return true;
        }
        self.misses += 1;
        let victim = ways
            .iter_mut()
            .min_by_key(|l| if l.valid { l.last_used } else { 0 })
            .expect("cache has at least one way");
        *victim = Line { tag, valid: true, last_used: self.tick };
        false
    }
}
