"""In-memory run registry.

Runs are keyed by their run id, so re-submitting an identical config while
it is running (or after it finished) attaches to the existing job instead
of computing it twice.  Failed jobs may be retried by submitting again.
"""

import threading

from fedledger.errors import FedledgerError
from fedledger.config import run_id
from fedledger.runner import execute_run


class Job:
    def __init__(self, rid):
        self.run_id = rid
        self.status = "running"
        self.run_dir = None
        self.n_records = None
        self.error = None
        self.thread = None


class JobRegistry:
    def __init__(self):
        self._lock = threading.Lock()
        self._jobs = {}

    def submit(self, config, wait=True):
        rid = run_id(config)
        with self._lock:
            job = self._jobs.get(rid)
            fresh = job is None or job.status == "failed"
            if fresh:
                job = Job(rid)
                self._jobs[rid] = job
                job.thread = threading.Thread(
                    target=self._execute, args=(config, job), daemon=True
                )
        if fresh:
            job.thread.start()
        if wait and job.thread is not None:
            job.thread.join()
        return self.info(rid)

    def _execute(self, config, job):
        try:
            result = execute_run(config)
        except FedledgerError as exc:
            with self._lock:
                job.status = "failed"
                job.error = {"category": exc.category, "message": str(exc)}
        except Exception as exc:
            with self._lock:
                job.status = "failed"
                job.error = {"category": "runtime", "message": f"{type(exc).__name__}: {exc}"}
        else:
            with self._lock:
                job.status = "done"
                job.run_dir = result["run_dir"]
                job.n_records = result["n_records"]

    def info(self, rid):
        with self._lock:
            job = self._jobs.get(rid)
            if job is None:
                return None
            return {
                "run_id": job.run_id,
                "status": job.status,
                "run_dir": job.run_dir,
                "n_records": job.n_records,
                "error": job.error,
            }

    def list(self):
        with self._lock:
            rids = sorted(self._jobs)
        return [self.info(rid) for rid in rids]
