const NIL: u32 = u32::MAX;

/// All contents ordered from least to most recently lost, as a doubly
/// linked list over content ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LrlList {
    prev: Vec<u32>,
    next: Vec<u32>,
    head: u32,
    tail: u32,
}

impl LrlList {
    /// List in the given order; `order` must be a permutation of `0..n`.
    pub fn new(order: &[usize]) -> Self {
        let n = order.len();
        let mut prev = vec![NIL; n];
        let mut next = vec![NIL; n];
        for w in order.windows(2) {
            next[w[0]] = w[1] as u32;
            prev[w[1]] = w[0] as u32;
        }
        LrlList {
            prev,
            next,
            head: order.first().map_or(NIL, |&c| c as u32),
            tail: order.last().map_or(NIL, |&c| c as u32),
        }
    }

    pub fn len(&self) -> usize {
        self.prev.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prev.is_empty()
    }

    /// Least recently lost content.
    pub fn head(&self) -> Option<usize> {
        (self.head != NIL).then_some(self.head as usize)
    }

    pub fn tail(&self) -> Option<usize> {
        (self.tail != NIL).then_some(self.tail as usize)
    }

    /// Moves `c` to the most-recently-lost end.
    pub fn touch(&mut self, c: usize) {
        let c32 = c as u32;
        if self.tail == c32 {
            return;
        }
        let (p, nx) = (self.prev[c], self.next[c]);
        if p == NIL {
            self.head = nx;
        } else {
            self.next[p as usize] = nx;
        }
        // c is not the tail, so it has a successor
        self.prev[nx as usize] = p;
        self.prev[c] = self.tail;
        self.next[c] = NIL;
        self.next[self.tail as usize] = c32;
        self.tail = c32;
    }

    /// Contents from least to most recently lost.
    pub fn iter(&self) -> LrlIter<'_> {
        LrlIter {
            list: self,
            cur: self.head,
        }
    }
}

pub struct LrlIter<'a> {
    list: &'a LrlList,
    cur: u32,
}

impl Iterator for LrlIter<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.cur == NIL {
            return None;
        }
        let c = self.cur as usize;
        self.cur = self.list.next[c];
        Some(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn touch_moves_to_tail() {
        let mut l = LrlList::new(&[2, 0, 1, 3]);
        l.touch(2);
        assert_eq!(l.iter().collect::<Vec<_>>(), vec![0, 1, 3, 2]);
        l.touch(1);
        assert_eq!(l.iter().collect::<Vec<_>>(), vec![0, 3, 2, 1]);
        l.touch(1);
        assert_eq!(l.iter().collect::<Vec<_>>(), vec![0, 3, 2, 1]);
        assert_eq!(l.head(), Some(0));
        assert_eq!(l.tail(), Some(1));
    }

    proptest! {
        #[test]
        fn stays_a_permutation(n in 1usize..30, touches in prop::collection::vec(0usize..30, 0..60)) {
            let order: Vec<usize> = (0..n).collect();
            let mut l = LrlList::new(&order);
            for &t in touches.iter().filter(|&&t| t < n) {
                l.touch(t);
                prop_assert_eq!(l.tail(), Some(t));
            }
            let mut v: Vec<_> = l.iter().collect();
            prop_assert_eq!(v.len(), n);
            v.sort();
            prop_assert_eq!(v, order);
            let back: Vec<_> = {
                let mut out = Vec::new();
                let mut cur = l.tail;
                while cur != NIL {
                    out.push(cur as usize);
                    cur = l.prev[cur as usize];
                }
                out
            };
            let mut fwd: Vec<_> = l.iter().collect();
            fwd.reverse();
            prop_assert_eq!(back, fwd);
        }
    }
}
