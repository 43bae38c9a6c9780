/// A set of small integer ids with O(1) insert, remove and uniform sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedSet {
    items: Vec<u32>,
    pos: Vec<u32>,
}

const ABSENT: u32 = u32::MAX;

impl IndexedSet {
    pub fn with_universe(size: usize) -> Self {
        IndexedSet {
            items: Vec::new(),
            pos: vec![ABSENT; size],
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.pos[id] != ABSENT
    }

    pub fn insert(&mut self, id: usize) -> bool {
        if self.contains(id) {
            return false;
        }
        self.pos[id] = self.items.len() as u32;
        self.items.push(id as u32);
        true
    }

    pub fn remove(&mut self, id: usize) -> bool {
        let p = self.pos[id];
        if p == ABSENT {
            return false;
        }
        let last = *self.items.last().expect("non-empty when an element is present");
        self.items.swap_remove(p as usize);
        if last as usize != id {
            self.pos[last as usize] = p;
        }
        self.pos[id] = ABSENT;
        true
    }

    pub fn get(&self, index: usize) -> usize {
        self.items[index] as usize
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.items.iter().map(|&i| i as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_remove_keeps_positions() {
        let mut s = IndexedSet::with_universe(10);
        for i in [3, 7, 1, 9] {
            assert!(s.insert(i));
        }
        assert!(!s.insert(7));
        assert!(s.remove(3));
        assert!(!s.remove(3));
        let mut v: Vec<_> = s.iter().collect();
        v.sort();
        assert_eq!(v, vec![1, 7, 9]);
        for i in 0..s.len() {
            assert_eq!(s.pos[s.get(i)] as usize, i);
        }
    }
}
