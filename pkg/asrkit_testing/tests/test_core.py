from io import StringIO

from django.test import SimpleTestCase
from django.test import override_settings

from asrkit.core import BaseJob
from asrkit.core import format_log_line


class BaseJobTests(SimpleTestCase):
    def _mk_one(self, **kwargs):
        return BaseJob(**kwargs)

    def test_log_kept_when_enabled(self):
        job = self._mk_one(logging_enabled=True)
        job.add_log(mod="lm", act="count", msg="3 n-grams")
        self.assertEqual([{"act": "count", "mod": "lm", "msg": "3 n-grams"}], job.log)

    def test_log_dropped_when_disabled(self):
        job = self._mk_one(logging_enabled=False)
        job.add_log(mod="lm", act="count", msg="3 n-grams")
        self.assertEqual([], job.log)

    @override_settings(DEBUG=True)
    def test_logging_follows_debug(self):
        self.assertTrue(self._mk_one().logging_enabled)

    @override_settings(DEBUG=False)
    def test_logging_off_without_debug(self):
        self.assertFalse(self._mk_one().logging_enabled)

    def test_print_log(self):
        job = self._mk_one(logging_enabled=False)
        job.print_log = True
        job.log_stream = StringIO()
        job.add_log(mod=None, act="vocab", msg="12 words")
        self.assertEqual(format_log_line(None, "vocab", "12 words") + "\n", job.log_stream.getvalue())
        self.assertTrue(job.log_stream.getvalue().startswith("GLOBAL"))

    def test_bad_mod(self):
        job = self._mk_one()
        with self.assertRaises(TypeError):
            job.add_log(mod=1, act="x", msg="")
