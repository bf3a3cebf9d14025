# cython: language_level=3
"""Compiled recovery kernels.

Two data structures live here: a treap-backed prefix split tree (ordered
sequence of potentials with logarithmic merge / prefix-split) and a splay
based link-cut forest with lazy path addition used to acyclify flows.  Both
mirror the pure-Python reference kernels operation for operation, including
tie-breaking, so the two backends can be cross-checked.
"""

import numpy as np

cimport cython
from libc.stdlib cimport free, malloc, realloc

cdef double INF = 1e300
cdef Py_ssize_t NIL = -1


# --------------------------------------------------------------------------
# treap node pool shared by all PrefixSplitTree instances
# --------------------------------------------------------------------------

cdef struct TreapNode:
    double phi
    double subtotal
    Py_ssize_t rep
    Py_ssize_t left
    Py_ssize_t right
    Py_ssize_t parent
    unsigned long long prio
    Py_ssize_t owner        # tree id for membership checks, -1 when pooled


cdef class _TreapPool:
    cdef TreapNode* nodes
    cdef Py_ssize_t cap
    cdef Py_ssize_t size
    cdef Py_ssize_t free_head
    cdef unsigned long long rng
    cdef public unsigned long long work

    def __cinit__(self):
        self.cap = 1024
        self.nodes = <TreapNode*> malloc(self.cap * sizeof(TreapNode))
        if self.nodes == NULL:
            raise MemoryError()
        self.size = 0
        self.free_head = NIL
        self.rng = 0x9E3779B97F4A7C15ULL
        self.work = 0

    def __dealloc__(self):
        if self.nodes != NULL:
            free(self.nodes)

    cdef unsigned long long next_prio(self):
        self.rng ^= self.rng << 13
        self.rng ^= self.rng >> 7
        self.rng ^= self.rng << 17
        return self.rng

    cdef Py_ssize_t alloc(self, double phi, Py_ssize_t rep, Py_ssize_t owner):
        cdef Py_ssize_t idx
        cdef TreapNode* nd
        if self.free_head != NIL:
            idx = self.free_head
            self.free_head = self.nodes[idx].right
        else:
            if self.size == self.cap:
                self.cap *= 2
                self.nodes = <TreapNode*> realloc_nodes(self.nodes, self.cap)
            idx = self.size
            self.size += 1
        nd = &self.nodes[idx]
        nd.phi = phi
        nd.subtotal = phi
        nd.rep = rep
        nd.left = NIL
        nd.right = NIL
        nd.parent = NIL
        nd.prio = self.next_prio()
        nd.owner = owner
        return idx

    cdef void release(self, Py_ssize_t idx):
        self.nodes[idx].owner = -1
        self.nodes[idx].right = self.free_head
        self.free_head = idx

    cdef void pull(self, Py_ssize_t x):
        cdef TreapNode* nd = &self.nodes[x]
        nd.subtotal = nd.phi
        if nd.left != NIL:
            nd.subtotal += self.nodes[nd.left].subtotal
        if nd.right != NIL:
            nd.subtotal += self.nodes[nd.right].subtotal

    cdef Py_ssize_t join(self, Py_ssize_t a, Py_ssize_t b):
        """All of b after all of a; returns the new root."""
        if a == NIL:
            return b
        if b == NIL:
            return a
        self.work += 1
        cdef Py_ssize_t r
        if self.nodes[a].prio > self.nodes[b].prio:
            r = self.join(self.nodes[a].right, b)
            self.nodes[a].right = r
            self.nodes[r].parent = a
            self.pull(a)
            self.nodes[a].parent = NIL
            return a
        else:
            r = self.join(a, self.nodes[b].left)
            self.nodes[b].left = r
            self.nodes[r].parent = b
            self.pull(b)
            self.nodes[b].parent = NIL
            return b

    cdef (Py_ssize_t, Py_ssize_t) split_by_potential(self, Py_ssize_t x,
                                                     double t, Py_ssize_t owner):
        """Split subtree x into (prefix of potential exactly t, rest).

        Splits one node in place when t falls strictly inside it; the split
        keeps the original node as the right fragment so existing handles
        stay valid.
        """
        if x == NIL:
            return NIL, NIL
        self.work += 1
        # no TreapNode* may be cached across calls that can grow the pool
        cdef double ls = 0.0
        cdef Py_ssize_t a, b, head, l
        if self.nodes[x].left != NIL:
            ls = self.nodes[self.nodes[x].left].subtotal
        if t <= ls:
            # shortest prefix: an exact boundary stops before trailing zeros
            a, b = self.split_by_potential(self.nodes[x].left, t, owner)
            self.nodes[x].left = b
            if b != NIL:
                self.nodes[b].parent = x
            self.pull(x)
            self.nodes[x].parent = NIL
            if a != NIL:
                self.nodes[a].parent = NIL
            return a, x
        cdef double t2 = t - ls - self.nodes[x].phi
        if t2 < 0.0:
            # boundary strictly inside this node: split it in place
            l = self.nodes[x].left
            self.nodes[x].left = NIL
            head = self.alloc(t - ls, self.nodes[x].rep, owner)
            self.nodes[x].phi = self.nodes[x].phi - (t - ls)
            self.pull(x)
            self.nodes[x].parent = NIL
            if l != NIL:
                self.nodes[l].parent = NIL
            a = self.join(l, head)
            return a, x
        if t2 == 0.0:
            b = self.nodes[x].right
            self.nodes[x].right = NIL
            self.pull(x)
            self.nodes[x].parent = NIL
            if b != NIL:
                self.nodes[b].parent = NIL
            return x, b
        a, b = self.split_by_potential(self.nodes[x].right, t2, owner)
        self.nodes[x].right = a
        if a != NIL:
            self.nodes[a].parent = x
        self.pull(x)
        self.nodes[x].parent = NIL
        if b != NIL:
            self.nodes[b].parent = NIL
        return x, b

    cdef Py_ssize_t find_root(self, Py_ssize_t x):
        while self.nodes[x].parent != NIL:
            self.work += 1
            x = self.nodes[x].parent
        return x

    cdef Py_ssize_t delete_node(self, Py_ssize_t x):
        """Remove node x; returns the new root of its tree."""
        cdef Py_ssize_t repl = self.join(self.nodes[x].left, self.nodes[x].right)
        cdef Py_ssize_t p = self.nodes[x].parent
        cdef Py_ssize_t cur, root
        if p != NIL:
            if self.nodes[p].left == x:
                self.nodes[p].left = repl
            else:
                self.nodes[p].right = repl
            if repl != NIL:
                self.nodes[repl].parent = p
            cur = p
            while cur != NIL:
                self.work += 1
                self.pull(cur)
                root = cur
                cur = self.nodes[cur].parent
        else:
            root = repl
            if repl != NIL:
                self.nodes[repl].parent = NIL
        self.release(x)
        return root


cdef TreapNode* realloc_nodes(TreapNode* old, Py_ssize_t cap) except NULL:
    cdef TreapNode* fresh = <TreapNode*> realloc(old, cap * sizeof(TreapNode))
    if fresh == NULL:
        raise MemoryError()
    return fresh


cdef _TreapPool _GLOBAL_POOL = _TreapPool()
cdef Py_ssize_t _TREE_COUNTER = 0


class PstError(Exception):
    pass


cdef class PrefixSplitTree:
    """Treap-backed ordered sequence of (potential, representative) nodes."""

    cdef _TreapPool pool
    cdef Py_ssize_t root
    cdef Py_ssize_t tree_id

    def __cinit__(self):
        global _TREE_COUNTER
        self.pool = _GLOBAL_POOL
        self.root = NIL
        self.tree_id = _TREE_COUNTER
        _TREE_COUNTER += 1

    @property
    def work(self):
        return self.pool.work

    def __len__(self):
        return len(self.items())

    def total(self):
        if self.root == NIL:
            return 0.0
        return self.pool.nodes[self.root].subtotal

    def insert(self, double phi, Py_ssize_t rep=-1):
        if phi < 0:
            raise PstError("potentials must be nonnegative")
        cdef Py_ssize_t idx = self.pool.alloc(phi, rep, self.tree_id)
        self.root = self.pool.join(self.root, idx)
        return idx

    def delete(self, Py_ssize_t node):
        if node < 0 or node >= self.pool.size or self.pool.nodes[node].owner == -1:
            raise PstError("delete of an unknown node")
        if self.root == NIL or self.pool.find_root(node) != self.root:
            raise PstError("delete of a node from a different tree")
        self.root = self.pool.delete_node(node)

    def merge(self, PrefixSplitTree other):
        if other is self:
            raise PstError("cannot merge a tree with itself")
        self.root = self.pool.join(self.root, other.root)
        other.root = NIL

    def prefix_split(self, double t):
        cdef double tot = self.total()
        if t < 0 or t > tot:
            raise PstError(f"prefix_split amount {t} outside [0, {tot}]")
        cdef PrefixSplitTree out = PrefixSplitTree()
        cdef Py_ssize_t a, b
        if t == 0.0:
            return out
        a, b = self.pool.split_by_potential(self.root, t, out.tree_id)
        out.root = a
        self.root = b
        return out

    def items(self):
        """In-order (potential, representative) pairs."""
        result = []
        stack = []
        cdef Py_ssize_t x = self.root
        while x != NIL or stack:
            while x != NIL:
                stack.append(x)
                x = self.pool.nodes[x].left
            x = stack.pop()
            result.append((self.pool.nodes[x].phi, self.pool.nodes[x].rep))
            x = self.pool.nodes[x].right
        return result

    def node_value(self, Py_ssize_t node):
        return self.pool.nodes[node].phi, self.pool.nodes[node].rep


# --------------------------------------------------------------------------
# link-cut forest with lazy path addition; nodes are vertices and edges
# --------------------------------------------------------------------------

cdef struct LctNode:
    Py_ssize_t left
    Py_ssize_t right
    Py_ssize_t parent
    bint flip
    double add            # pending addition for the children's subtrees
    double frel           # edge nodes: flow along in-order direction
    double w
    double sum_wsign
    double min_pos        # min frel over positive-flow edges in subtree
    double min_neg        # min -frel over negative-flow edges in subtree
    Py_ssize_t edge_id    # -1 for vertex nodes
    bint live


@cython.final
cdef class _Forest:
    cdef LctNode* nd
    cdef Py_ssize_t cap
    cdef Py_ssize_t n_vertices
    cdef Py_ssize_t next_slot
    cdef Py_ssize_t free_head

    def __cinit__(self, Py_ssize_t n_vertices, Py_ssize_t edge_capacity):
        self.cap = n_vertices + edge_capacity + 1
        self.nd = <LctNode*> malloc(self.cap * sizeof(LctNode))
        if self.nd == NULL:
            raise MemoryError()
        self.n_vertices = n_vertices
        self.next_slot = n_vertices
        self.free_head = NIL
        cdef Py_ssize_t i
        for i in range(n_vertices):
            self.init_node(i, -1, 0.0, 0.0)

    def __dealloc__(self):
        if self.nd != NULL:
            free(self.nd)

    cdef void init_node(self, Py_ssize_t x, Py_ssize_t edge_id, double w, double frel):
        cdef LctNode* p = &self.nd[x]
        p.left = NIL
        p.right = NIL
        p.parent = NIL
        p.flip = False
        p.add = 0.0
        p.frel = frel
        p.w = w
        p.edge_id = edge_id
        p.live = True
        self.pull(x)

    cdef Py_ssize_t alloc_edge(self, Py_ssize_t edge_id, double w, double frel):
        cdef Py_ssize_t x
        if self.free_head != NIL:
            x = self.free_head
            self.free_head = self.nd[x].right
        else:
            x = self.next_slot
            self.next_slot += 1
            if x >= self.cap:
                raise MemoryError("forest edge pool exhausted")
        self.init_node(x, edge_id, w, frel)
        return x

    cdef void release_edge(self, Py_ssize_t x):
        self.nd[x].live = False
        self.nd[x].right = self.free_head
        self.free_head = x

    cdef void pull(self, Py_ssize_t x):
        cdef LctNode* p = &self.nd[x]
        cdef double s = 0.0, mp = INF, mn = INF
        if p.edge_id >= 0:
            if p.frel > 0.0:
                s = p.w
                mp = p.frel
            elif p.frel < 0.0:
                s = -p.w
                mn = -p.frel
        cdef LctNode* c
        if p.left != NIL:
            c = &self.nd[p.left]
            s += c.sum_wsign
            if c.min_pos < mp: mp = c.min_pos
            if c.min_neg < mn: mn = c.min_neg
        if p.right != NIL:
            c = &self.nd[p.right]
            s += c.sum_wsign
            if c.min_pos < mp: mp = c.min_pos
            if c.min_neg < mn: mn = c.min_neg
        p.sum_wsign = s
        p.min_pos = mp
        p.min_neg = mn

    cdef void set_flip(self, Py_ssize_t x):
        if x == NIL:
            return
        cdef LctNode* p = &self.nd[x]
        cdef Py_ssize_t tmp = p.left
        p.left = p.right
        p.right = tmp
        if p.edge_id >= 0:
            p.frel = -p.frel
        p.sum_wsign = -p.sum_wsign
        cdef double m = p.min_pos
        p.min_pos = p.min_neg
        p.min_neg = m
        p.add = -p.add
        p.flip = not p.flip

    cdef void set_add(self, Py_ssize_t x, double delta):
        if x == NIL or delta == 0.0:
            return
        cdef LctNode* p = &self.nd[x]
        if p.edge_id >= 0:
            p.frel += delta
        if p.min_pos < INF:
            p.min_pos += delta
        if p.min_neg < INF:
            p.min_neg -= delta
        p.add += delta

    cdef void push(self, Py_ssize_t x):
        cdef LctNode* p = &self.nd[x]
        if p.flip:
            self.set_flip(p.left)
            self.set_flip(p.right)
            p.flip = False
        if p.add != 0.0:
            self.set_add(p.left, p.add)
            self.set_add(p.right, p.add)
            p.add = 0.0

    cdef bint is_splay_root(self, Py_ssize_t x):
        cdef Py_ssize_t p = self.nd[x].parent
        if p == NIL:
            return True
        return self.nd[p].left != x and self.nd[p].right != x

    cdef void rotate(self, Py_ssize_t x):
        cdef Py_ssize_t y = self.nd[x].parent
        cdef Py_ssize_t z = self.nd[y].parent
        cdef bint y_root = self.is_splay_root(y)
        cdef Py_ssize_t b
        if self.nd[y].left == x:
            b = self.nd[x].right
            self.nd[x].right = y
            self.nd[y].left = b
        else:
            b = self.nd[x].left
            self.nd[x].left = y
            self.nd[y].right = b
        if b != NIL:
            self.nd[b].parent = y
        self.nd[y].parent = x
        self.nd[x].parent = z
        if not y_root:
            if self.nd[z].left == y:
                self.nd[z].left = x
            else:
                self.nd[z].right = x
        self.pull(y)
        self.pull(x)

    cdef void splay(self, Py_ssize_t x):
        cdef Py_ssize_t y, z
        self.push(x)
        while not self.is_splay_root(x):
            y = self.nd[x].parent
            if self.is_splay_root(y):
                self.push(y)
                self.push(x)
                self.rotate(x)
            else:
                z = self.nd[y].parent
                self.push(z)
                self.push(y)
                self.push(x)
                if (self.nd[z].left == y) == (self.nd[y].left == x):
                    self.rotate(y)
                    self.rotate(x)
                else:
                    self.rotate(x)
                    self.rotate(x)

    cdef void access(self, Py_ssize_t x):
        cdef Py_ssize_t y
        self.splay(x)
        if self.nd[x].right != NIL:
            self.nd[x].right = NIL
            self.pull(x)
        while self.nd[x].parent != NIL:
            y = self.nd[x].parent
            self.splay(y)
            self.nd[y].right = x
            self.pull(y)
            self.rotate(x)

    cdef void make_root(self, Py_ssize_t x):
        self.access(x)
        self.set_flip(x)

    cdef Py_ssize_t find_root(self, Py_ssize_t x):
        self.access(x)
        while self.nd[x].left != NIL:
            self.push(x)
            x = self.nd[x].left
        self.splay(x)
        return x

    cdef void link(self, Py_ssize_t u, Py_ssize_t v, Py_ssize_t enode):
        # u and v become the left and right neighbours of the edge node
        self.make_root(u)
        self.access(u)
        self.make_root(v)
        self.access(v)
        self.nd[enode].left = u
        self.nd[enode].right = v
        self.nd[u].parent = enode
        self.nd[v].parent = enode
        self.pull(enode)

    cdef double cut(self, Py_ssize_t enode, Py_ssize_t a, Py_ssize_t b):
        """Remove the edge node; returns its final flow in a->b direction."""
        cdef Py_ssize_t l, r
        cdef double residue
        self.make_root(a)
        self.access(b)
        self.splay(enode)
        self.push(enode)
        residue = self.nd[enode].frel
        l = self.nd[enode].left
        r = self.nd[enode].right
        if l != NIL:
            self.nd[l].parent = NIL
        if r != NIL:
            self.nd[r].parent = NIL
        self.nd[enode].left = NIL
        self.nd[enode].right = NIL
        self.release_edge(enode)
        return residue

def acyclify_core(Py_ssize_t n_vertices, eu_arr, ev_arr, w_arr, f_arr):
    """LCT-backed acyclify; same contract as the reference implementation."""
    cdef long long[::1] eu = np.ascontiguousarray(eu_arr, dtype=np.int64)
    cdef long long[::1] ev = np.ascontiguousarray(ev_arr, dtype=np.int64)
    cdef double[::1] w = np.ascontiguousarray(w_arr, dtype=np.float64)
    f_out = np.array(f_arr, dtype=np.float64, copy=True)
    cdef double[::1] f = f_out
    cdef Py_ssize_t m = eu.shape[0]
    cdef _Forest forest = _Forest(n_vertices, n_vertices + 2)
    # edge id -> live LCT node (or NIL)
    enode_of = np.full(m, NIL, dtype=np.int64)
    cdef long long[::1] enode = enode_of

    cdef Py_ssize_t e, u, v, x, r, node, eid, i
    cdef double pi, dart_mag, dart_sign, amount, best_val, residue
    cdef list zeros
    cdef list stack

    for e in range(m):
        if f[e] == 0.0:
            continue
        if f[e] > 0.0:
            u = eu[e]; v = ev[e]; dart_sign = 1.0
        else:
            u = ev[e]; v = eu[e]; dart_sign = -1.0
        if forest.find_root(u) != forest.find_root(v):
            node = forest.alloc_edge(e, w[e], f[e] if dart_sign > 0 else -f[e])
            forest.link(u, v, node)
            enode[e] = node
            continue
        forest.make_root(u)
        forest.access(v)
        r = v
        pi = forest.nd[r].sum_wsign
        dart_mag = f[e] if dart_sign > 0 else -f[e]
        if w[e] >= pi:
            # cheaper via the path: move flow off the dart onto the path
            best_val = forest.nd[r].min_neg
            amount = dart_mag if dart_mag <= best_val else best_val
            forest.set_add(r, amount)
            f[e] -= amount * dart_sign
        else:
            # cheaper via the dart: drain the path onto the dart
            amount = forest.nd[r].min_pos
            forest.set_add(r, -amount)
            f[e] += amount * dart_sign
        # collect every path edge whose flow reached zero
        zeros = []
        stack = [r]
        while stack:
            x = stack.pop()
            if x == NIL:
                continue
            if _has_zero(forest, x):
                forest.push(x)
                if forest.nd[x].edge_id >= 0 and forest.nd[x].frel == 0.0:
                    zeros.append(x)
                stack.append(forest.nd[x].left)
                stack.append(forest.nd[x].right)
        for i in range(len(zeros)):
            x = zeros[i]
            eid = forest.nd[x].edge_id
            f[eid] = 0.0
            enode[eid] = NIL
            forest.cut(x, eu[eid], ev[eid])
        if f[e] == 0.0:
            continue
        if forest.find_root(u) == forest.find_root(v):
            # float drift kept the saturating edge marginally nonzero: cut
            # the smallest-magnitude path edge and reroute its residue
            forest.make_root(u)
            forest.access(v)
            x = _min_abs_edge(forest, v)
            eid = forest.nd[x].edge_id
            residue = forest.cut(x, eu[eid], ev[eid])
            f[eid] = 0.0
            enode[eid] = NIL
            node = forest.alloc_edge(e, w[e], f[e] if dart_sign > 0 else -f[e])
            forest.link(u, v, node)
            enode[e] = node
            if residue != 0.0:
                forest.make_root(eu[eid])
                forest.access(ev[eid])
                forest.set_add(ev[eid], residue)
        else:
            node = forest.alloc_edge(e, w[e], f[e] if dart_sign > 0 else -f[e])
            forest.link(u, v, node)
            enode[e] = node

    # write forest-resident flows back into f
    for e in range(m):
        node = enode[e]
        if node == NIL or not forest.nd[node].live or forest.nd[node].edge_id != e:
            continue
        forest.make_root(eu[e])
        forest.access(ev[e])
        forest.splay(node)
        f[e] = forest.nd[node].frel
    return f_out


cdef inline bint _has_zero(_Forest forest, Py_ssize_t x):
    return forest.nd[x].min_pos == 0.0 or forest.nd[x].min_neg == 0.0


cdef Py_ssize_t _min_abs_edge(_Forest forest, Py_ssize_t root):
    """Leftmost edge node of smallest |flow| in the exposed path (full walk)."""
    cdef Py_ssize_t best = NIL
    cdef double best_val = INF
    cdef double val
    cdef list stack = []
    cdef Py_ssize_t x = root
    while x != NIL or stack:
        while x != NIL:
            forest.push(x)
            stack.append(x)
            x = forest.nd[x].left
        x = stack.pop()
        if forest.nd[x].edge_id >= 0:
            val = forest.nd[x].frel
            if val < 0:
                val = -val
            if val < best_val:
                best_val = val
                best = x
        x = forest.nd[x].right
    return best


def cp_loop(Py_ssize_t iters, Py_ssize_t check_every, Py_ssize_t stall_checks,
            Py_ssize_t min_iters, Py_ssize_t hard_cap, double extend_tol,
            eu_arr, ev_arr, w_arr, Py_ssize_t net_start, Py_ssize_t npts,
            coeff_cell_arr, row_scale_arr,
            topo_desc_arr, node_parent_arr, node_coeff_arr,
            entry_node_of_arr, entry_cell_arr,
            cand_node_of_arr, cand_cell_arr, cand_prob_arr,
            cell_entry_node_arr,
            double kappa, bn_arr, double tau, double sigma):
    """Row-equilibrated primal-dual iteration, fully in C.

    Mirrors the numpy implementation in solver._PrimalDual.run; returns
    (best_x, best_estimate, iterations_used).
    """
    cdef long long[::1] eu = np.ascontiguousarray(eu_arr, dtype=np.int64)
    cdef long long[::1] ev = np.ascontiguousarray(ev_arr, dtype=np.int64)
    cdef double[::1] w = np.ascontiguousarray(w_arr, dtype=np.float64)
    cdef double[::1] coeff = np.ascontiguousarray(coeff_cell_arr, dtype=np.float64)
    cdef double[::1] row_scale = np.ascontiguousarray(row_scale_arr, dtype=np.float64)
    cdef long long[::1] topo = np.ascontiguousarray(topo_desc_arr, dtype=np.int64)
    cdef long long[::1] parent = np.ascontiguousarray(node_parent_arr, dtype=np.int64)
    cdef double[::1] node_coeff = np.ascontiguousarray(node_coeff_arr, dtype=np.float64)
    cdef long long[::1] entry_node = np.ascontiguousarray(entry_node_of_arr, dtype=np.int64)
    cdef long long[::1] entry_cell = np.ascontiguousarray(entry_cell_arr, dtype=np.int64)
    cdef long long[::1] cand_node = np.ascontiguousarray(cand_node_of_arr, dtype=np.int64)
    cdef long long[::1] cand_cell = np.ascontiguousarray(cand_cell_arr, dtype=np.int64)
    cdef double[::1] cand_prob = np.ascontiguousarray(cand_prob_arr, dtype=np.float64)
    cdef long long[::1] cell_entry = np.ascontiguousarray(cell_entry_node_arr, dtype=np.int64)
    cdef double[::1] bn = np.ascontiguousarray(bn_arr, dtype=np.float64)

    cdef Py_ssize_t ne = eu.shape[0]
    cdef Py_ssize_t nv = bn.shape[0]
    cdef Py_ssize_t ncells = coeff.shape[0]
    cdef Py_ssize_t nnodes = parent.shape[0]
    cdef Py_ssize_t nentry = entry_cell.shape[0]
    cdef Py_ssize_t ncand = cand_cell.shape[0]

    x_np = np.zeros(ne)
    best_np = np.zeros(ne)
    cdef double[::1] x = x_np
    cdef double[::1] best = best_np
    cdef double[::1] xbar = np.zeros(ne)
    cdef double[::1] y = np.zeros(nv)
    cdef double[::1] div = np.zeros(nv)
    cdef double[::1] bz = np.zeros(ncells)
    cdef double[::1] s_node = np.zeros(max(nnodes, 1))
    cdef double[::1] acc = np.zeros(ncells)
    cdef double[::1] wvtx = np.zeros(nv)
    cdef double[::1] c_net = np.zeros(ncells)

    cdef Py_ssize_t k, e, i, nd, it, used
    cdef double best_est = INF, est, gv, thr, resid_norm, cost
    cdef double window_prev = INF, window_drop
    cdef Py_ssize_t stalled = 0

    if hard_cap < iters:
        hard_cap = iters

    # c = row_scale * B bn   (rows live on net vertices npts..npts+ncells)
    _apply_B(bn, coeff, topo, parent, entry_node, entry_cell, cand_node,
             cand_cell, cand_prob, npts, s_node, acc, bz)
    for i in range(ncells):
        c_net[i] = row_scale[i] * bz[i]

    # baseline estimate: empty flow, full residual
    _apply_B(bn, coeff, topo, parent, entry_node, entry_cell, cand_node,
             cand_cell, cand_prob, npts, s_node, acc, bz)
    best_est = 0.0
    for i in range(ncells):
        best_est += bz[i] if bz[i] >= 0 else -bz[i]
    best_est *= kappa
    used = 0
    for it in range(hard_cap):
        used = it + 1
        # y += sigma (row_scale * B A xbar - c)
        _divergence(xbar, eu, ev, div)
        _apply_B(div, coeff, topo, parent, entry_node, entry_cell, cand_node,
                 cand_cell, cand_prob, npts, s_node, acc, bz)
        for i in range(ncells):
            y[npts + i] += sigma * (row_scale[i] * bz[i] - c_net[i])
        # g = x - tau K^T y ; soft threshold on the net edges
        _apply_Bt(y, row_scale, coeff, node_coeff, topo, parent, entry_node,
                  entry_cell, cand_node, cand_cell, cand_prob, cell_entry,
                  npts, s_node, wvtx)
        for e in range(ne):
            if e < net_start:
                xbar[e] = 0.0
                continue
            gv = x[e] - tau * (wvtx[eu[e]] - wvtx[ev[e]])
            thr = tau * w[e]
            if gv > thr:
                gv -= thr
            elif gv < -thr:
                gv += thr
            else:
                gv = 0.0
            xbar[e] = 2.0 * gv - x[e]
            x[e] = gv
        if (it + 1) % check_every == 0 or it + 1 == hard_cap:
            for i in range(nv):
                div[i] = bn[i]
            _divergence_sub(x, eu, ev, div)
            cost = 0.0
            for e in range(net_start, ne):
                cost += (x[e] if x[e] >= 0 else -x[e]) * w[e]
            _apply_B(div, coeff, topo, parent, entry_node, entry_cell,
                     cand_node, cand_cell, cand_prob, npts, s_node, acc, bz)
            resid_norm = 0.0
            for i in range(ncells):
                resid_norm += bz[i] if bz[i] >= 0 else -bz[i]
            est = cost + kappa * resid_norm
            if est < best_est * (1.0 - 1e-4):
                best_est = est
                best_np[:] = x_np
                stalled = 0
            else:
                if est < best_est:
                    best_est = est
                    best_np[:] = x_np
                stalled += 1
                if stalled >= stall_checks and it + 1 >= min_iters:
                    break
            # beyond the base budget, keep going only while still dropping
            window_drop = (window_prev - est) / est if est > 0 else 0.0
            window_prev = est
            if it + 1 >= iters and window_drop < extend_tol:
                break
    return best_np, best_est, used


cdef void _divergence(double[::1] f, long long[::1] eu, long long[::1] ev,
                      double[::1] out):
    cdef Py_ssize_t i, e
    for i in range(out.shape[0]):
        out[i] = 0.0
    for e in range(f.shape[0]):
        out[eu[e]] += f[e]
        out[ev[e]] -= f[e]


cdef void _divergence_sub(double[::1] f, long long[::1] eu, long long[::1] ev,
                          double[::1] out):
    cdef Py_ssize_t e
    for e in range(f.shape[0]):
        out[eu[e]] -= f[e]
        out[ev[e]] += f[e]


cdef void _apply_B(double[::1] z, double[::1] coeff, long long[::1] topo,
                   long long[::1] parent, long long[::1] entry_node,
                   long long[::1] entry_cell, long long[::1] cand_node,
                   long long[::1] cand_cell, double[::1] cand_prob,
                   Py_ssize_t npts, double[::1] s_node, double[::1] acc,
                   double[::1] out):
    """out[cell] = coeff[cell] * (z_net[cell] + sum candidates)."""
    cdef Py_ssize_t i, k, nd
    for i in range(s_node.shape[0]):
        s_node[i] = 0.0
    for k in range(entry_cell.shape[0]):
        s_node[entry_node[k]] += z[npts + entry_cell[k]]
    for k in range(topo.shape[0]):
        nd = topo[k]
        if parent[nd] >= 0:
            s_node[parent[nd]] += s_node[nd]
    for i in range(acc.shape[0]):
        acc[i] = 0.0
    for k in range(cand_cell.shape[0]):
        acc[cand_cell[k]] += cand_prob[k] * s_node[cand_node[k]]
    for i in range(out.shape[0]):
        out[i] = coeff[i] * (z[npts + i] + acc[i])


cdef void _apply_Bt(double[::1] y, double[::1] row_scale, double[::1] coeff,
                    double[::1] node_coeff, long long[::1] topo,
                    long long[::1] parent, long long[::1] entry_node,
                    long long[::1] entry_cell, long long[::1] cand_node,
                    long long[::1] cand_cell, double[::1] cand_prob,
                    long long[::1] cell_entry, Py_ssize_t npts,
                    double[::1] w_node, double[::1] out):
    """out = B^T (row_scale * y) over vertices (zero on points)."""
    cdef Py_ssize_t i, k, nd, ncells = coeff.shape[0]
    for i in range(npts):
        out[i] = 0.0
    for i in range(w_node.shape[0]):
        w_node[i] = 0.0
    for k in range(cand_cell.shape[0]):
        w_node[cand_node[k]] += (
            cand_prob[k] * row_scale[cand_cell[k]] * y[npts + cand_cell[k]]
            * node_coeff[cand_node[k]]
        )
    # ancestor sums: walk nodes in increasing level order (reverse of topo)
    for k in range(topo.shape[0] - 1, -1, -1):
        nd = topo[k]
        if parent[nd] >= 0:
            w_node[nd] += w_node[parent[nd]]
    for i in range(ncells):
        out[npts + i] = coeff[i] * row_scale[i] * y[npts + i]
        if cell_entry[i] >= 0:
            out[npts + i] += w_node[cell_entry[i]]


def extract_core(Py_ssize_t n_vertices, su_arr, sv_arr, amounts_arr, mu_arr,
                 pst_cls=None):
    """Treap-backed transportation-map extraction; mirrors the reference."""
    import heapq

    cdef long long[::1] su = np.ascontiguousarray(su_arr, dtype=np.int64)
    cdef long long[::1] sv = np.ascontiguousarray(sv_arr, dtype=np.int64)
    cdef double[::1] amounts = np.ascontiguousarray(amounts_arr, dtype=np.float64)
    cdef double[::1] mu = np.ascontiguousarray(mu_arr, dtype=np.float64)
    cdef Py_ssize_t m = su.shape[0]
    # reproducible treap shapes (hence bitwise-identical sums) across calls
    _GLOBAL_POOL.rng = 0x9E3779B97F4A7C15ULL

    cdef Py_ssize_t k, v, wvert
    out_edges = [[] for _ in range(n_vertices)]
    indeg = np.zeros(n_vertices, dtype=np.int64)
    cdef long long[::1] indeg_v = indeg
    touched = set()
    for k in range(m):
        out_edges[su[k]].append(k)
        indeg_v[sv[k]] += 1
        touched.add(su[k])
        touched.add(sv[k])
    for v in range(n_vertices):
        if mu[v] != 0.0:
            touched.add(v)
    trees = {}
    ready = sorted(x for x in touched if indeg_v[x] == 0)
    heapq.heapify(ready)
    cdef double max_drift = 0.0, t, avail
    cdef Py_ssize_t processed = 0
    result = {}
    while ready:
        v = heapq.heappop(ready)
        processed += 1
        tree = trees.get(v)
        if tree is None:
            tree = PrefixSplitTree()
            trees[v] = tree
        if mu[v] > 0.0:
            tree.insert(mu[v], rep=v)
        for k in out_edges[v]:
            t = amounts[k]
            avail = tree.total()
            if t > avail:
                if t - avail > max_drift:
                    max_drift = t - avail
                t = avail
            prefix = tree.prefix_split(t)
            wvert = sv[k]
            wt = trees.get(wvert)
            if wt is None:
                wt = PrefixSplitTree()
                trees[wvert] = wt
            wt.merge(prefix)
            indeg_v[wvert] -= 1
            if indeg_v[wvert] == 0:
                heapq.heappush(ready, wvert)
    if processed != len(touched):
        raise ValueError("support graph is not a forest (topological order stuck)")
    for v in sorted(trees):
        if mu[v] < 0.0:
            for phi, rep in trees[v].items():
                if phi == 0.0:
                    continue
                key = (rep, v)
                result[key] = result.get(key, 0.0) + phi
    ps = np.array([key[0] for key in sorted(result)], dtype=np.int64)
    qs = np.array([key[1] for key in sorted(result)], dtype=np.int64)
    vals = np.array([result[key] for key in sorted(result)], dtype=np.float64)
    return ps, qs, vals, max_drift
