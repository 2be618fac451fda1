class GesmeError(Exception):
    """Базовое исключение для всех ошибок библиотеки"""
    def __init__(self, code, message, details=None):
        self.code = code
        self.message = message
        self.details = details

        super().__init__(f"Gesme Error {code}: {message}")

    @property
    def exit_code(self):
        """Код завершения процесса для CLI"""
        return self.code


# Ошибки формы и конфигурации

class DimensionError(GesmeError):
    """Несовпадение размерностей тензоров"""
    def __init__(self, message="Несовпадение размерностей", shapes=None):
        self.shapes = tuple(shapes) if shapes else ()
        if self.shapes:
            message = f"{message}; формы: {', '.join(str(tuple(s)) for s in self.shapes)}"
        super().__init__(2, message, {"shapes": self.shapes})


class ConfigError(GesmeError):
    """Недопустимая конфигурация или гиперпараметры"""
    def __init__(self, message="Недопустимая конфигурация", key=None):
        self.key = key
        super().__init__(2, message, {"key": key} if key else None)


class UsageError(GesmeError):
    """Неверное использование API (неизвестная задача, backward не от скаляра и т.п.)"""
    def __init__(self, message="Неверное использование API"):
        super().__init__(2, message)


# Ошибки данных

class IngestError(GesmeError):
    """Нарушение схемы или инвариантов при загрузке CSV"""
    def __init__(self, message="Ошибка загрузки данных", path=None, line=None):
        self.path = path
        self.line = line

        location = ""
        if path is not None:
            location = f"{path}"
            if line is not None:
                location += f":{line}"
            message = f"{location}: {message}"

        super().__init__(2, message, {"path": path, "line": line})


class CorruptCheckpointError(GesmeError):
    """Манифест и бинарный блок не согласованы или повреждены"""
    def __init__(self, message="Повреждённый файл параметров", path=None):
        self.path = path
        super().__init__(2, f"{message} ({path})" if path else message)


# Численные ошибки

class NumericalError(GesmeError):
    """Появление NaN/Inf в результате операции или в градиентах"""
    def __init__(self, message="Численная ошибка", source=None):
        self.source = source
        if source:
            message = f"{message} [{source}]"
        super().__init__(3, message, {"source": source})


# Фабрика исключений для оборачивания чужих ошибок

def create_gesme_error(kind, message, details=None):
    """
    Создает экземпляр исключения нужного типа по его виду

    :param kind: Вид ошибки (dimension, config, usage, ingest, checkpoint, numerical)
    :param message: Сообщение об ошибке
    :param details: Дополнительные данные (путь, номер строки, источник)
    :return: Экземпляр соответствующего класса исключения
    """
    details = details or {}

    if kind == "dimension":
        return DimensionError(message, details.get("shapes"))
    elif kind == "config":
        return ConfigError(message, details.get("key"))
    elif kind == "usage":
        return UsageError(message)
    elif kind == "ingest":
        return IngestError(message, details.get("path"), details.get("line"))
    elif kind == "checkpoint":
        return CorruptCheckpointError(message, details.get("path"))
    elif kind == "numerical":
        return NumericalError(message, details.get("source"))

    # Общая ошибка для остальных случаев
    else:
        return GesmeError(2, message, details)
