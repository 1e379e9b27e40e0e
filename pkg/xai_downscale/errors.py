"""
Exception hierarchy shared by every module.

Each class carries the category printed by the command line and the exit
code it maps to.
"""


class DownscaleError(Exception):

    category = 'error'
    exit_code = 1

    def __init__(self, message, **details):
        super(DownscaleError, self).__init__(message)
        self.details = details

    def one_line(self):
        text = ' '.join(str(self).split())
        return 'error {}: {}'.format(self.category, text)


class InputError(DownscaleError, ValueError):

    category = 'input'
    exit_code = 1


class GraphBuildError(InputError):

    category = 'graph-build'


class PreprocessingError(InputError):

    category = 'preprocessing'


class SpecError(InputError):

    category = 'spec'


class RenderError(InputError):

    category = 'render'


class FormatError(DownscaleError):

    category = 'format'
    exit_code = 2

    def __init__(self, message, position=None, **details):
        if position is not None:
            message = '{} (byte {})'.format(message, position)
        super(FormatError, self).__init__(message, **details)
        self.position = position


class TrainingError(DownscaleError):

    category = 'training'
    exit_code = 3


class AttributionError(DownscaleError):

    category = 'attribution'
    exit_code = 3


class InternalError(DownscaleError):

    category = 'internal'
    exit_code = 3
