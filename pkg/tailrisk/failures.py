import os
import json
import errno
import hashlib
import traceback

from tailrisk.reporter import describe_exception


class StageFailure(object):

    def __init__(self, data):
        self.data = data

    @classmethod
    def from_exc_info(cls, stage, exc_info, context=None):
        return cls({
            'stage': stage,
            'context': context or {},
            'exception': describe_exception(exc_info),
            'traceback': ''.join(traceback.format_exception(*exc_info)),
        })

    @property
    def stage(self):
        return self.data['stage']

    def to_json(self):
        return self.data


class FailureController(object):
    """Keeps one JSON document per failed stage inside the artifact
    directory.
    """

    def __init__(self, output_path):
        self.path = os.path.join(os.path.abspath(output_path), '.tailrisk',
                                 'failures')

    def get_filename(self, stage):
        return os.path.join(
            self.path,
            hashlib.md5(stage.encode('utf-8')).hexdigest()
        ) + '.json'

    def lookup_failure(self, stage):
        """Looks up a failure for the given stage."""
        fn = self.get_filename(stage)
        try:
            with open(fn, 'r') as f:
                return StageFailure(json.load(f))
        except IOError as e:
            if e.errno != errno.ENOENT:
                raise

    def iter_failures(self):
        try:
            names = sorted(os.listdir(self.path))
        except OSError:
            return
        for name in names:
            if name.endswith('.json'):
                with open(os.path.join(self.path, name), 'r') as f:
                    yield StageFailure(json.load(f))

    def clear_failure(self, stage):
        """Clears a stored failure."""
        try:
            os.unlink(self.get_filename(stage))
        except OSError as e:
            if e.errno != errno.ENOENT:
                raise

    def store_failure(self, stage, exc_info, context=None):
        """Stores a failure from an exception info tuple."""
        fn = self.get_filename(stage)
        try:
            os.makedirs(os.path.dirname(fn))
        except OSError:
            pass
        with open(fn, 'w') as f:
            json.dump(StageFailure.from_exc_info(
                stage, exc_info, context).to_json(), f, indent=2)
            f.write('\n')
