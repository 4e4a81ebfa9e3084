#[derive(Debug, Clone, Copy, Default)]
struct Line {
    tag: u64,
    valid: bool,
    last_used: u64,
}

/// Single-level set-associative data cache with LRU replacement. Only hit/miss
/// timing is modelled; data always comes from memory.
#[derive(Debug, Clone)]
pub struct TimedCache {
    sets: Vec<Vec<Line>>,
    num_sets: u64,
    line_bytes: u64,
    hit_latency: u64,
    miss_latency: u64,
    clock: u64,
}

impl TimedCache {
    pub fn new(num_sets: usize, ways: usize, line_bytes: u64, hit_latency: u64, miss_latency: u64) -> Self {
        assert!(num_sets.is_power_of_two() && line_bytes.is_power_of_two() && ways > 0);
        TimedCache {
            sets: vec![vec![Line::default(); ways]; num_sets],
            num_sets: num_sets as u64,
            line_bytes,
            hit_latency,
            miss_latency,
            clock: 0,
        }
    }

    pub fn line_bytes(&self) -> u64 {
        self.line_bytes
    }

    pub fn num_sets(&self) -> u64 {
        self.num_sets
    }

    pub fn hit_latency(&self) -> u64 {
        self.hit_latency
    }

    pub fn miss_latency(&self) -> u64 {
        self.miss_latency
    }

    fn locate(&self, paddr: u64) -> (usize, u64) {
        let line = paddr / self.line_bytes;
        ((line % self.num_sets) as usize, line / self.num_sets)
    }

    /// Accesses the line holding `paddr` and returns the latency. A miss
    /// fills the line, evicting the LRU way.
    pub fn access(&mut self, paddr: u64) -> u64 {
        self.clock += 1;
        let (set, tag) = self.locate(paddr);
        let clock = self.clock;
        let ways = &mut self.sets[set];
        if let Some(line) = ways.iter_mut().find(|l| l.valid && l.tag == tag) {
            line.last_used = clock;
            return self.hit_latency;
        }
        let victim = ways.iter().position(|l| !l.valid).unwrap_or_else(|| {
            ways.iter()
                .enumerate()
                .min_by_key(|(_, l)| l.last_used)
                .map(|(i, _)| i)
                .unwrap_or(0)
        });
        ways[victim] = Line {
            tag,
            valid: true,
            last_used: clock,
        };
        self.miss_latency
    }

    /// Invalidates the line holding `paddr`, if resident.
    pub fn flush(&mut self, paddr: u64) {
        let (set, tag) = self.locate(paddr);
        for line in &mut self.sets[set] {
            if line.valid && line.tag == tag {
                line.valid = false;
            }
        }
    }

    /// Residency check without touching LRU state.
    pub fn contains(&self, paddr: u64) -> bool {
        let (set, tag) = self.locate(paddr);
        self.sets[set].iter().any(|l| l.valid && l.tag == tag)
    }
}
