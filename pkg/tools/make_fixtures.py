"""Write the EXPLAIN (ANALYZE, FORMAT JSON) fixture documents under fixtures/.

Run once; the outputs are committed.  Golden ``.hint`` files are written by
hand, not by this script.
"""

import json
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "fixtures"


def scan(kind, alias, rel, est, act, **extra):
    node = {"Node Type": kind, "Parent Relationship": "Outer", "Relation Name": rel, "Alias": alias,
            "Plan Rows": est, "Actual Rows": act, "Actual Loops": 1}
    node.update(extra)
    return node


def join(kind, outer, inner, est, act, **extra):
    inner = dict(inner, **{"Parent Relationship": "Inner"})
    node = {"Node Type": kind, "Parent Relationship": "Outer", "Join Type": "Inner",
            "Plan Rows": est, "Actual Rows": act, "Actual Loops": 1, "Plans": [outer, inner]}
    node.update(extra)
    return node


def wrap(kind, child, est, act, **extra):
    node = {"Node Type": kind, "Plan Rows": est, "Actual Rows": act, "Actual Loops": 1, "Plans": [child]}
    node.update(extra)
    return node


def doc(plan, exec_ms, plan_ms=1.5):
    return [{"Plan": plan, "Planning Time": plan_ms, "Triggers": [], "Execution Time": exec_ms}]


def job20a():
    k = scan("Seq Scan", "k", "keyword", 8, 8, Filter="(keyword = ANY (...))", **{"Rows Removed by Filter": 134162,
             "Actual Total Time": 11.2})
    mk = {"Node Type": "Bitmap Heap Scan", "Parent Relationship": "Inner", "Relation Name": "movie_keyword",
          "Alias": "mk", "Plan Rows": 41, "Actual Rows": 1694, "Actual Loops": 8, "Actual Total Time": 3.9,
          "Recheck Cond": "(keyword_id = k.id)",
          "Plans": [{"Node Type": "Bitmap Index Scan", "Parent Relationship": "Outer",
                     "Index Name": "keyword_id_movie_keyword", "Plan Rows": 41, "Actual Rows": 1694}]}
    j1 = join("Nested Loop", k, mk, 328, 13552, **{"Actual Total Time": 45.1})
    cc = scan("Index Scan", "cc", "complete_cast", 1, 2, **{"Index Name": "movie_id_complete_cast",
              "Actual Loops": 13552, "Actual Total Time": 0.01})
    j2 = join("Nested Loop", j1, cc, 9, 2361, **{"Actual Total Time": 160.4})
    cct1 = wrap("Hash", scan("Seq Scan", "cct1", "comp_cast_type", 1, 1, Filter="((kind)::text = 'cast'::text)",
                             **{"Rows Removed by Filter": 3}), 1, 1)
    j3 = join("Hash Join", j2, cct1, 3, 1235, **{"Hash Cond": "(cc.subject_id = cct1.id)"})
    cct2 = wrap("Hash", scan("Seq Scan", "cct2", "comp_cast_type", 1, 2,
                             Filter="((kind)::text ~~ '%complete%'::text)", **{"Rows Removed by Filter": 2}), 1, 2)
    j4 = join("Hash Join", j3, cct2, 1, 1235, **{"Hash Cond": "(cc.status_id = cct2.id)"})
    t = scan("Index Scan", "t", "title", 1, 1, Filter="(production_year > 1950)",
             **{"Index Name": "title_pkey", "Rows Removed by Filter": 0, "Actual Loops": 1235})
    j5 = join("Nested Loop", j4, t, 1, 1188)
    kt = wrap("Hash", scan("Seq Scan", "kt", "kind_type", 1, 1, Filter="((kind)::text = 'movie'::text)",
                           **{"Rows Removed by Filter": 6}), 1, 1)
    j6 = join("Hash Join", j5, kt, 1, 880, **{"Hash Cond": "(t.kind_id = kt.id)"})
    ci = scan("Index Scan", "ci", "cast_info", 34, 61345, **{"Index Name": "movie_id_cast_info", "Actual Loops": 880})
    j7 = join("Nested Loop", j6, ci, 27, 61345)
    chn = wrap("Memoize", scan("Index Scan", "chn", "char_name", 1, 0,
                               Filter="((name)::text ~~ '%Tony%Stark%'::text)",
                               **{"Index Name": "char_name_pkey", "Rows Removed by Filter": 1}),
               1, 0, **{"Cache Key": "ci.person_role_id"})
    j8 = join("Nested Loop", j7, chn, 1, 99)
    n = scan("Index Scan", "n", "name", 1, 1, **{"Index Name": "name_pkey", "Actual Loops": 99})
    j9 = join("Nested Loop", j8, n, 1, 99)
    return doc(wrap("Aggregate", j9, 1, 1, Strategy="Plain", **{"Partial Mode": "Simple"}), 1423.77)


def agg_hashjoin():
    a = scan("Seq Scan", "a", "orders", 1000, 1000)
    b = wrap("Hash", scan("Seq Scan", "b", "customer", 150, 150), 150, 150)
    return doc(wrap("Aggregate", join("Hash Join", a, b, 1000, 1000), 1, 1, Strategy="Plain"), 12.5)


def single_scan():
    return doc(scan("Index Only Scan", "t", "title", 10, 12, **{"Index Name": "title_idx"}), 0.4)


def parallel_bushy():
    a = scan("Seq Scan", "a", "lineitem", 60000, 59000, **{"Rows Removed by Filter": 1000})
    b = wrap("Sort", scan("Index Scan", "b", "orders", 15000, 15000), 15000, 15000, **{"Sort Key": ["b.o_orderkey"]})
    left = join("Merge Join", wrap("Sort", a, 60000, 59000), b, 60000, 59000)
    c = scan("Seq Scan", "c", "customer", 1500, 1500)
    d = wrap("Materialize", scan("Seq Scan", "d", "nation", 25, 25), 25, 25)
    right = join("Nested Loop", c, d, 1500, 1500)
    top = join("Hash Join", left, wrap("Hash", right, 1500, 1500), 59000, 58000)
    gather = wrap("Gather", top, 59000, 58000, **{"Workers Planned": 2})
    return doc(wrap("Sort", wrap("Aggregate", gather, 25, 25), 25, 25), 310.2)


FIXTURES = {
    "job20a": job20a,
    "agg_hashjoin": agg_hashjoin,
    "single_scan": single_scan,
    "parallel_bushy": parallel_bushy,
}

if __name__ == "__main__":
    OUT.mkdir(exist_ok=True)
    for name, build in FIXTURES.items():
        (OUT / f"{name}.json").write_text(json.dumps(build(), indent=2) + "\n")
